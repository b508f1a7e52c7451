#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "rcrank/pretrain.hpp"
#include "rcrank/synthgen.hpp"

using namespace rcrank;

namespace {

GeneratedWorkload& pool_workload() {
  static GeneratedWorkload wl = [] {
    GenConfig cfg;
    cfg.total = 120;
    cfg.labeled_target = 30;
    return generate_workload(cfg, 21);
  }();
  return wl;
}

RCRankModel make_model(uint64_t seed) {
  const Dataset& ds = pool_workload().dataset;
  ModelConfig cfg;
  cfg.enc.kpi_q = ds.kpi_q;
  cfg.enc.kpi_t = ds.kpi_t;
  cfg.r = ds.r();
  RCRankModel model(cfg, ds.root_cause_catalog, ds.norm);
  model.init_weights(seed);
  return model;
}

}  // namespace

TEST_CASE("match_critical_spans") {
  // table mention in SQL matched to the Scan label
  QueryRecord rec;
  rec.sql_text = "select qty from orders";
  rec.sql = tokenize_sql(rec.sql_text, Vocabulary::builtin());
  rec.plan = parse_plan(json{{"op", "Scan"}, {"est_rows", 10.0}, {"est_cost", 0.1}, {"label", "orders"}});
  auto pairs = match_critical_spans(rec);
  int table_pairs = 0;
  for (const auto& p : pairs)
    if (p.kind == PairKind::Table) {
      ++table_pairs;
      CHECK(rec.sql.tokens[static_cast<size_t>(p.sql_begin)].text == "orders");
      CHECK(p.plan_node == 0);
    }
  CHECK(table_pairs == 1);

  // numeric pairs always reference the root
  int numeric = 0;
  for (const auto& p : pairs)
    if (p.kind == PairKind::Numeric) {
      ++numeric;
      CHECK(p.plan_node == rec.plan.root());
      CHECK(p.log_field >= 0);
    }
  CHECK(numeric == 2);

  // no shared identifiers -> no identifier pairs
  QueryRecord alien = rec;
  alien.plan = parse_plan(json{{"op", "Scan"}, {"est_rows", 10.0}, {"est_cost", 0.1}, {"label", "zzz"}});
  for (const auto& p : match_critical_spans(alien)) CHECK(p.kind == PairKind::Numeric);

  // generator records: at least one identifier pair per referenced table
  const GeneratedWorkload& wl = pool_workload();
  for (size_t i = 0; i < 100; ++i) {
    auto rp = match_critical_spans(wl.dataset.records[i]);
    std::set<std::string> matched_tables;
    for (const auto& p : rp) {
      if (p.kind != PairKind::Numeric && p.plan_node >= 0) {
        const PlanNode& node = wl.dataset.records[i].plan.node(p.plan_node);
        if (node.op == OpKind::Scan || node.op == OpKind::IndexScan || node.op == OpKind::SubqueryScan ||
            node.op == OpKind::Insert || node.op == OpKind::Update)
          matched_tables.insert(node.label);
      }
    }
    for (const std::string& t : wl.specs[i].tables) CHECK(matched_tables.count(t) == 1);
  }
}

TEST_CASE("mask_for_pretraining") {
  QueryRecord rec;
  rec.sql_text = "select qty from orders where qty > 10 and price < 5 and status = 2 order by price desc";
  rec.sql = tokenize_sql(rec.sql_text, Vocabulary::builtin());
  REQUIRE(rec.sql.length() == 20);
  rec.plan = parse_plan(json{{"op", "Scan"}, {"est_rows", 10.0}, {"est_cost", 0.1}});

  // zero pairs, SQL length 20 -> 3 random tokens masked
  Rng rng(5);
  MaskedSample fallback = mask_for_pretraining(rec, {}, rng);
  CHECK(fallback.masked_modality == Modality::SQL);
  CHECK(fallback.sql_positions.size() == 3);

  // seed-fixed run twice -> identical masks
  Rng r1(9), r2(9);
  auto pairs = match_critical_spans(rec);
  MaskedSample a = mask_for_pretraining(rec, pairs, r1);
  MaskedSample b = mask_for_pretraining(rec, pairs, r2);
  CHECK(a.masked_modality == b.masked_modality);
  CHECK(a.sql_positions == b.sql_positions);
  CHECK(a.plan_nodes == b.plan_nodes);
  CHECK(a.log_fields == b.log_fields);

  // masking never alters the record itself
  std::string before = detokenize(rec.sql);
  (void)mask_for_pretraining(rec, pairs, rng);
  CHECK(detokenize(rec.sql) == before);

  // the SQL/plan side-choice coin is fair: identifier pairs only
  std::vector<AlignmentPair> ident;
  AlignmentPair p;
  p.kind = PairKind::Table;
  p.sql_begin = 3;
  p.sql_end = 4;
  p.plan_node = 0;
  ident.push_back(p);
  Rng coin_rng(1234);
  int sql_side = 0;
  const int kFlips = 10000;
  for (int i = 0; i < kFlips; ++i) {
    MaskedSample s = mask_for_pretraining(rec, ident, coin_rng);
    if (s.masked_modality == Modality::SQL) ++sql_side;
  }
  double frac = static_cast<double>(sql_side) / kFlips;
  CHECK(frac >= 0.48);
  CHECK(frac <= 0.52);
}

TEST_CASE("aggregate_and_predict and pretrain loss") {
  RCRankModel model = make_model(31);
  const QueryRecord& rec = pool_workload().dataset.records[0];
  auto pairs = match_critical_spans(rec);
  Rng rng(77);
  MaskedSample sample = mask_for_pretraining(rec, pairs, rng);

  Graph g(false);
  EncodeOptions opts;
  opts.masked_sql = sample.sql();
  opts.masked_plan = sample.plan();
  opts.masked_log = sample.log();
  auto embeds = model.encode(g, rec, opts);
  auto preds = aggregate_and_predict(g, model, embeds, {0, 1});
  REQUIRE(preds.size() == 2);
  CHECK(preds[0]->cols() == model.config().enc.d);  // prediction width d

  // no masked targets -> empty prediction list and zero mask term
  auto none = aggregate_and_predict(g, model, embeds, {});
  CHECK(none.empty());
  MaskedSample empty;
  PretrainLossParts zero = build_pretrain_loss(g, model, rec, empty);
  CHECK(zero.mask_term == 0.0);
  CHECK(zero.kpi_term > 0.0);  // untrained reconstruction misses

  // untrained loss is strictly positive and decomposes exactly
  PretrainLossParts parts = build_pretrain_loss(g, model, rec, sample);
  CHECK(parts.total->value().item() > 0.0);
  CHECK(parts.total->value().item() == doctest::Approx(parts.mask_term + parts.kpi_term).epsilon(1e-12));

  // single-target toy case: loss equals the hand-summed squared error
  MaskedSample one;
  one.masked_modality = Modality::SQL;
  one.sql_positions = {2};
  Graph g2(false);
  EncodeOptions o2;
  o2.masked_sql = &one.sql_positions;
  auto embeds2 = model.encode(g2, rec, o2);
  Node* pred = aggregate_and_predict(g2, model, embeds2, {2})[0];
  Tensor target = model.sql_token_target(rec.sql.tokens[2].id);
  double hand = 0.0;
  for (int c = 0; c < pred->cols(); ++c) {
    double diff = pred->value().at(0, c) - target.at(0, c);
    hand += diff * diff;
  }
  PretrainLossParts single = build_pretrain_loss(g2, model, rec, one, false);
  CHECK(single.total->value().item() == doctest::Approx(hand).epsilon(1e-9));

  // gradients flow into all three aggregated encoders
  Graph g3(true, &rng);
  PretrainLossParts train_parts = build_pretrain_loss(g3, model, rec, sample);
  g3.backward(train_parts.total);
  GradAccum acc(model.params());
  g3.accumulate_param_grads(acc);
  for (const char* name : {"enc_s/tok_emb", "enc_p/op_emb", "enc_l/w1", "enc_i/conv1_w", "dec_i/conv1_w"}) {
    const Tensor& grad = acc.at(model.params().at(name).index);
    double mag = 0.0;
    for (double v : grad.vec()) mag += std::abs(v);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("kpi autoencoder improves on constant series after pretraining") {
  // records whose KPI matrices are constant per channel
  Dataset pool;
  pool.root_cause_catalog = pool_workload().dataset.root_cause_catalog;
  pool.kpi_q = pool_workload().dataset.kpi_q;
  pool.kpi_t = pool_workload().dataset.kpi_t;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    QueryRecord rec = pool_workload().dataset.records[static_cast<size_t>(i)];
    rec.impacts.reset();
    rec.split = "pretrain";
    for (int c = 0; c < rec.kpis.q; ++c) {
      double level = rng.uniform(10.0, 90.0);
      for (int k = 0; k < rec.kpis.t; ++k) rec.kpis.at(c, k) = level;
    }
    pool.records.push_back(std::move(rec));
  }
  compute_norm_stats(pool);

  auto recon_error = [&](const RCRankModel& m) {
    double total = 0.0;
    for (const QueryRecord& rec : pool.records) {
      Graph g(false);
      auto embeds = m.encode(g, rec, {});
      Node* recon = m.decode_kpi(g, embeds[3].pooled);
      Node* diff = g.sub(recon, m.kpi_target(g, rec));
      total += g.mean(g.mul(diff, diff))->value().item();
    }
    return total / static_cast<double>(pool.records.size());
  };

  ModelConfig mc;
  mc.enc.kpi_q = pool.kpi_q;
  mc.enc.kpi_t = pool.kpi_t;
  mc.r = pool.r();
  RCRankModel untrained(mc, pool.root_cause_catalog, pool.norm);
  untrained.init_weights(9);
  RCRankModel trained(mc, pool.root_cause_catalog, pool.norm);
  trained.init_weights(9);
  PretrainConfig pc;
  pc.epochs = 4;
  pc.batch = 20;
  pc.seed = 9;
  run_pretraining(trained, pool, pc);
  CHECK(recon_error(trained) < recon_error(untrained));
}

TEST_CASE("run_pretraining") {
  const Dataset& ds = pool_workload().dataset;
  CHECK(ds.records.size() == 120);

  auto run = [&](uint64_t seed) {
    RCRankModel model = make_model(seed);
    PretrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 32;
    cfg.seed = seed;
    PretrainResult res = run_pretraining(model, ds, cfg);
    model.save_encoder_checkpoint("pre_test.ckpt");
    std::ifstream f("pre_test.ckpt", std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(f), {});
    return std::make_pair(res, bytes);
  };
  auto [res1, bytes1] = run(3);
  auto [res2, bytes2] = run(3);
  CHECK(bytes1 == bytes2);  // same seed -> identical checkpoint
  REQUIRE(res1.log.size() == 3);
  CHECK(res1.log.back().total() < res1.log.front().total());  // loss decreases
  for (const auto& row : res1.log) {
    CHECK(row.l_sql >= 0.0);
    CHECK(row.l_plan >= 0.0);
    CHECK(row.l_log >= 0.0);
    CHECK(row.l_kpis >= 0.0);
  }
  std::remove("pre_test.ckpt");

  // empty pool
  RCRankModel model = make_model(5);
  Dataset empty;
  empty.root_cause_catalog = ds.root_cause_catalog;
  CHECK_THROWS_AS(run_pretraining(model, empty, {}), RcError);
}
