// Acceptance suite: runs every acceptance criterion end to end and prints one
// pass/fail line per criterion. Heavy criteria share deterministic artifacts
// (datasets, pretrained encoders, trained models), which is equivalent to
// re-running them because every pipeline stage is seeded.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "metric_oracles.hpp"
#include "rcrank/harness.hpp"
#include "rcrank/runconfig.hpp"

using namespace rcrank;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
  int id;
  bool pass;
  std::string title;
  std::string detail;
};

std::vector<Criterion> g_results;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  g_results.push_back({id, pass, title, detail});
  std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient fidelity
// ---------------------------------------------------------------------------

Parameter& random_param(ParamStore& store, const std::string& name, Shape shape, uint64_t seed) {
  Parameter& p = store.create(name, shape, Init::Zeros, seed);
  Rng rng(seed ^ fnv1a64(name));
  for (auto& x : p.value.vec()) x = rng.uniform(-1.0, 1.0);
  return p;
}

double check_ops_for_seed(uint64_t seed) {
  double worst = 0.0;
  auto check = [&](const std::function<Node*(Graph&, ParamStore&)>& loss_fn, ParamStore& store) {
    auto run = [&](GradAccum* acc) {
      Graph g(false);
      Node* loss = loss_fn(g, store);
      if (acc) {
        g.backward(loss);
        g.accumulate_param_grads(*acc);
      }
      return loss->value().item();
    };
    worst = std::max(worst, grad_check(run, store).max_rel_err);
  };
  {
    ParamStore s;
    random_param(s, "a", {3, 4}, seed);
    random_param(s, "b", {4, 5}, seed + 1);
    random_param(s, "bias", {1, 5}, seed + 2);
    check(
        [](Graph& g, ParamStore& st) {
          Node* y = g.add(g.matmul(g.param(st.at("a")), g.param(st.at("b"))), g.param(st.at("bias")));
          return g.mean(g.mul(g.relu(y), g.sigmoid(y)));
        },
        s);
  }
  {
    ParamStore s;
    random_param(s, "x", {4, 6}, seed + 3);
    check(
        [](Graph& g, ParamStore& st) {
          Node* x = g.param(st.at("x"));
          Node* sm1 = g.softmax(x, 1);
          Node* sm0 = g.softmax(x, 0);
          Node* cat = g.concat({g.slice(sm1, 1, 0, 3), g.slice(sm0, 1, 3, 3)}, 1);
          Node* t = g.transpose(cat);
          return g.sum(g.mul(t, t));
        },
        s);
  }
  {
    ParamStore s;
    random_param(s, "x", {3, 8}, seed + 4);
    random_param(s, "gain", {1, 8}, seed + 5);
    random_param(s, "bias", {1, 8}, seed + 6);
    check(
        [](Graph& g, ParamStore& st) {
          Node* ln = g.layer_norm(g.param(st.at("x")), g.param(st.at("gain")), g.param(st.at("bias")));
          Node* y = g.sub(g.add_scalar(g.scale(ln, 0.7), 0.1), g.sigmoid(ln));
          return g.mean(g.mul(y, y));
        },
        s);
  }
  {
    ParamStore s;
    random_param(s, "emb", {6, 4}, seed + 7);
    check(
        [](Graph& g, ParamStore& st) {
          Node* e = g.rows(g.param(st.at("emb")), {1, 3, 1, 5});
          Node* r = g.reshape(e, {2, 8});
          return g.sum(g.mul(g.mean_rows(r), g.mean_rows(r)));
        },
        s);
  }
  {
    ParamStore s;
    random_param(s, "x", {2, 4, 5}, seed + 8);
    random_param(s, "k", {3, 2, 2, 3}, seed + 9);
    random_param(s, "cb", {3}, seed + 10);
    check(
        [](Graph& g, ParamStore& st) {
          Node* y = g.conv2d(g.param(st.at("x")), g.param(st.at("k")), g.param(st.at("cb")), 1, 2, 1, 1);
          return g.mean(g.mul(y, y));
        },
        s);
  }
  return worst;
}

QueryRecord tiny_record(uint64_t seed, int r) {
  Rng rng(seed);
  QueryRecord rec;
  rec.id = "tiny" + std::to_string(seed);
  rec.sql_text = seed % 2 == 0 ? "select qty from orders where qty > 10"
                               : "select price from users where region = 3 order by price";
  rec.sql = tokenize_sql(rec.sql_text, Vocabulary::builtin());
  json plan = {{"op", "Filter"},
               {"est_rows", 40.0 + static_cast<double>(seed % 7)},
               {"est_cost", 0.2},
               {"label", "qty"},
               {"children", json::array({{{"op", "Scan"},
                                          {"est_rows", 900.0 + static_cast<double>(seed % 13)},
                                          {"est_cost", 1.1},
                                          {"label", "orders"}}})}};
  rec.plan = parse_plan(plan);
  for (int i = 0; i < kLogFieldCount; ++i) rec.log_raw[i] = rng.uniform(0.0, 4.0);
  rec.kpis.q = 3;
  rec.kpis.t = 6;
  rec.kpis.values.resize(18);
  for (auto& v : rec.kpis.values) v = rng.uniform(0.0, 2.0);
  rec.runtime_s = 2.0;
  std::vector<double> y(static_cast<size_t>(r));
  // generic labels: impacts away from the epsilon hinge
  for (auto& v : y) v = rng.bernoulli(0.5) ? rng.uniform(0.2, 0.7) : rng.uniform(-0.05, 0.04);
  rec.impacts = y;
  return rec;
}

double check_full_loss_for_seed(uint64_t seed) {
  // A shrunken but complete model, in the same spirit as d=8: one layer and
  // block per stack, small KPI grid; every module and coupling is present.
  ModelConfig cfg;
  cfg.enc.d = 8;
  cfg.enc.sql_heads = 2;
  cfg.enc.plan_heads = 2;
  cfg.enc.sql_layers = 1;
  cfg.enc.plan_layers = 1;
  cfg.enc.kpi_q = 3;
  cfg.enc.kpi_t = 6;
  cfg.enc.kpi_c1 = 2;
  cfg.enc.kpi_c2 = 4;
  cfg.fusion_blocks = 1;
  cfg.r = 5;
  RCRankModel model(cfg, RootCauseCatalog::five().names, NormStats{});
  model.init_weights(seed);
  QueryRecord rec_a = tiny_record(seed * 2 + 1, 5);
  QueryRecord rec_b = tiny_record(seed * 2 + 2, 5);
  TrainConfig tc;
  auto run = [&](GradAccum* acc) {
    Graph g(false);  // dropout disabled: the check needs a deterministic map
    Node* loss_a = build_total_loss(g, model.forward_estimates(g, rec_a), *rec_a.impacts, tc).total;
    Node* loss_b = build_total_loss(g, model.forward_estimates(g, rec_b), *rec_b.impacts, tc).total;
    Node* loss = g.scale(g.add(loss_a, loss_b), 0.5);
    if (acc) {
      g.backward(loss);
      g.accumulate_param_grads(*acc);
    }
    return loss->value().item();
  };
  // Every parameter that participates in the Eq. 17 path; the pretraining
  // decoder/aggregator weights do not reach this loss.
  std::vector<Parameter*> subset;
  for (Parameter* p : model.params().ordered()) {
    if (p->name.starts_with("dec_i/") || p->name.starts_with("agg/")) continue;
    subset.push_back(p);
  }
  return grad_check(run, model.params(), subset).max_rel_err;
}

void criterion1() {
  auto t0 = Clock::now();
  double worst_op = 0.0, worst_model = 0.0;
  for (uint64_t seed : {11ULL, 22ULL, 33ULL, 44ULL, 55ULL}) worst_op = std::max(worst_op, check_ops_for_seed(seed));
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL})
    worst_model = std::max(worst_model, check_full_loss_for_seed(seed));
  double secs = seconds_since(t0);
  char detail[256];
  std::snprintf(detail, sizeof detail,
                "per-op max rel err %.2e, full-model (d=8, 2-record batch) max rel err %.2e, %.0fs (budget 120s)",
                worst_op, worst_model, secs);
  report(1, worst_op < 1e-4 && worst_model < 1e-4 && secs < 120.0, "gradient fidelity", detail);
}

// ---------------------------------------------------------------------------
// Criterion 2: loss-formula exactness
// ---------------------------------------------------------------------------

void criterion2() {
  bool pass = true;
  std::ostringstream detail;
  // order hinge: truth gap 9.6% vs estimated gap 6.5% -> 0.031; 10.1% -> 0
  double active = loss_order(std::vector<double>{0.2, 0.104}, std::vector<double>{0.18, 0.115});
  double inactive = loss_order(std::vector<double>{0.2, 0.104}, std::vector<double>{0.2, 0.099});
  pass &= std::abs(active - 0.031) <= 1e-9 && std::abs(inactive) <= 1e-9;
  // valid hinge worked numbers
  double over = loss_valid(std::vector<double>{0.05}, std::vector<double>{0.12}, 0.10, 0.02);
  double under = loss_valid(std::vector<double>{0.30}, std::vector<double>{0.05}, 0.10, 0.02);
  pass &= std::abs(over - 0.04) <= 1e-9 && std::abs(under - 0.07) <= 1e-9;
  // impact formula: 1.5s -> 0.67s improves by 55.33% (0.5533 at 4 decimals)
  double impact = impact_from_runtimes(1.5, 0.67);
  pass &= std::abs(impact - (1.5 - 0.67) / 1.5) <= 1e-9;
  pass &= std::abs(std::round(impact * 1e4) / 1e4 - 0.5533) <= 1e-12;
  detail << "order hinge " << active << "/" << inactive << ", valid hinge " << over << "/" << under << ", impact "
         << impact;
  report(2, pass, "loss-formula exactness", detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 3: metric oracles
// ---------------------------------------------------------------------------

void criterion3() {
  auto t0 = Clock::now();
  double worst = 0.0;
  for (int r : {5, 10}) {
    for (uint64_t seed : {301ULL, 302ULL}) {
      Rng rng(seed);
      ImpactMatrix truth(200), est(200);
      for (int i = 0; i < 200; ++i) {
        truth[static_cast<size_t>(i)].resize(static_cast<size_t>(r));
        est[static_cast<size_t>(i)].resize(static_cast<size_t>(r));
        for (int j = 0; j < r; ++j) {
          double y = rng.bernoulli(0.4) ? 0.0 : rng.uniform(-0.1, 0.9);
          double e = rng.uniform(-0.2, 0.9);
          if (rng.bernoulli(0.25)) y = std::round(y * 4.0) / 4.0;  // tie cases
          if (rng.bernoulli(0.25)) e = std::round(e * 4.0) / 4.0;
          truth[static_cast<size_t>(i)][static_cast<size_t>(j)] = y;
          est[static_cast<size_t>(i)][static_cast<size_t>(j)] = e;
        }
      }
      worst = std::max(worst, std::abs(v_acc(truth, est, 0.1) - oracle::v_acc(truth, est, 0.1)));
      worst = std::max(worst, std::abs(top1_acc(truth, est, 0.1) - oracle::top1_acc(truth, est, 0.1)));
      auto [m, s] = mse_with_std(truth, est);
      auto [om, os] = oracle::mse(truth, est);
      worst = std::max({worst, std::abs(m - om), std::abs(s - os)});
      worst = std::max(worst, std::abs(mc_acc(truth, est, 0.1) - oracle::mc_acc(truth, est, 0.1)));
      worst = std::max(worst, std::abs(kendall_tau(truth, est) - oracle::tau(truth, est)));
      worst = std::max(worst, std::abs(top1_ir(truth, est) - oracle::top1_ir(truth, est)));
    }
  }
  double secs = seconds_since(t0);
  char detail[160];
  std::snprintf(detail, sizeof detail, "max |impl - oracle| %.2e over 200 pairs, r in {5,10}, %.1fs (budget 60s)",
                worst, secs);
  report(3, worst <= 1e-12 && secs < 60.0, "metric oracles", detail);
}

// ---------------------------------------------------------------------------
// Criteria 4-7: trained pipelines on the default synthetic benchmark
// ---------------------------------------------------------------------------

struct SeedRun {
  MetricsReport full_test;
  double best_val_top1 = 0.0;
  double wall_s = 0.0;
};

void criteria_4_to_7() {
  GenConfig gen;  // default: 12,000 queries, ~2,000 labeled slow, r=5
  GeneratedWorkload wl = generate_workload(gen, 1);
  auto [train_ds, val_ds, test_ds] = partition_by_tags(wl.dataset);

  PipelineConfig base;
  base.model.enc.kpi_q = wl.dataset.kpi_q;
  base.model.enc.kpi_t = wl.dataset.kpi_t;
  base.model.r = wl.dataset.r();

  const std::vector<uint64_t> seeds = {1, 2, 3};
  std::vector<std::unique_ptr<RCRankModel>> pretrained;
  std::vector<std::unique_ptr<RCRankModel>> full_models;
  std::vector<SeedRun> runs;
  double pipeline_wall = 0.0;

  for (uint64_t seed : seeds) {
    auto t0 = Clock::now();
    auto pre = std::make_unique<RCRankModel>(base.model, train_ds.root_cause_catalog, train_ds.norm);
    pre->init_weights(seed);
    PretrainConfig pc = base.pretrain;
    pc.seed = seed;
    run_pretraining(*pre, train_ds, pc);

    PipelineConfig cfg = base;
    cfg.train.seed = seed;
    TrainedPipeline pipe = run_pipeline(train_ds, val_ds, cfg, pre.get());
    SeedRun run;
    run.full_test = evaluate_model(pipe.model, test_ds, cfg.train.epsilon);
    run.best_val_top1 = pipe.train_result.best_val_top1;
    run.wall_s = seconds_since(t0);
    pipeline_wall += run.wall_s;
    std::printf("  [seed %llu] test Top1-ACC %.4f V-ACC %.4f Tau %.4f (%.0fs)\n",
                static_cast<unsigned long long>(seed), run.full_test.top1_acc, run.full_test.v_acc,
                run.full_test.tau, run.wall_s);
    std::fflush(stdout);
    runs.push_back(run);
    pretrained.push_back(std::move(pre));
    full_models.push_back(std::make_unique<RCRankModel>(std::move(pipe.model)));
  }

  // Criterion 4: accuracy floors across all three seeds plus the runtime
  // budget, which the spec states for a 4-core CPU; on narrower machines the
  // budget is pro-rated by the missing cores and both numbers are printed.
  {
    double min_top1 = 1.0, min_vacc = 1.0;
    for (const SeedRun& r : runs) {
      min_top1 = std::min(min_top1, r.full_test.top1_acc);
      min_vacc = std::min(min_vacc, r.full_test.v_acc);
    }
    unsigned cores = std::max(1u, std::thread::hardware_concurrency());
    double budget = 1800.0 * (4.0 / std::min(4u, cores));
    char detail[256];
    std::snprintf(detail, sizeof detail,
                  "min Top1-ACC %.4f (floor 0.60), min V-ACC %.4f (floor 0.75), %.0fs on %u cores (4-core budget "
                  "1800s, pro-rated %.0fs)",
                  min_top1, min_vacc, pipeline_wall, cores, budget);
    report(4, min_top1 >= 0.60 && min_vacc >= 0.75 && pipeline_wall < budget, "end-to-end learning", detail);
  }

  // Criterion 5: ablation directionality against concat, no-gate, MSE-only.
  {
    int concat_tau = 0, concat_top1 = 0, nogate_top1 = 0, mse_mcacc = 0;
    for (size_t i = 0; i < seeds.size(); ++i) {
      auto run_variant = [&](Variant v) {
        PipelineConfig cfg = base;
        cfg.train.seed = seeds[i];
        apply_variant(v, cfg);
        TrainedPipeline pipe = run_pipeline(train_ds, val_ds, cfg, pretrained[i].get());
        return evaluate_model(pipe.model, test_ds, cfg.train.epsilon);
      };
      MetricsReport concat = run_variant(Variant::Concat);
      MetricsReport nogate = run_variant(Variant::NoGate);
      MetricsReport mseonly = run_variant(Variant::MseOnly);
      const MetricsReport& full = runs[i].full_test;
      concat_tau += full.tau > concat.tau ? 1 : 0;
      concat_top1 += full.top1_acc > concat.top1_acc ? 1 : 0;
      nogate_top1 += full.top1_acc > nogate.top1_acc ? 1 : 0;
      mse_mcacc += full.mc_acc > mseonly.mc_acc ? 1 : 0;
      std::printf("  [seed %llu] concat Tau %.4f Top1 %.4f | no_gate Top1 %.4f | mse_only MC-ACC %.4f vs full "
                  "Tau %.4f Top1 %.4f MC-ACC %.4f\n",
                  static_cast<unsigned long long>(seeds[i]), concat.tau, concat.top1_acc, nogate.top1_acc,
                  mseonly.mc_acc, full.tau, full.top1_acc, full.mc_acc);
      std::fflush(stdout);
    }
    char detail[256];
    std::snprintf(detail, sizeof detail,
                  "full beats concat on Tau %d/3 and Top1-ACC %d/3, no-gate on Top1-ACC %d/3, MSE-only on MC-ACC "
                  "%d/3 (each needs >= 2/3)",
                  concat_tau, concat_top1, nogate_top1, mse_mcacc);
    report(5, concat_tau >= 2 && concat_top1 >= 2 && nogate_top1 >= 2 && mse_mcacc >= 2, "ablation directionality",
           detail);
  }

  // Criterion 6: pretraining benefit under a 15-epoch budget.
  {
    int wins = 0;
    std::ostringstream pairs;
    for (size_t i = 0; i < seeds.size(); ++i) {
      PipelineConfig cfg = base;
      cfg.train.seed = seeds[i];
      cfg.train.epochs = 15;
      TrainedPipeline with_pre = run_pipeline(train_ds, val_ds, cfg, pretrained[i].get());
      PipelineConfig scratch = cfg;
      scratch.use_pretraining = false;
      TrainedPipeline without = run_pipeline(train_ds, val_ds, scratch, nullptr);
      bool win = with_pre.train_result.best_val_top1 >= without.train_result.best_val_top1;
      wins += win ? 1 : 0;
      pairs << " s" << seeds[i] << ":" << with_pre.train_result.best_val_top1 << (win ? ">=" : "<")
            << without.train_result.best_val_top1;
    }
    char detail[256];
    std::snprintf(detail, sizeof detail, "pretrained val Top1-ACC >= scratch in %d/3 seeds (needs >= 2):%s", wins,
                  pairs.str().c_str());
    report(6, wins >= 2, "pretraining benefit", detail);
  }

  // Criterion 7: end-to-end improvement loop on the test set.
  {
    SpecsFile specs;
    specs.db = wl.db;
    specs.cost = wl.cost;
    for (size_t i = 0; i < wl.specs.size(); ++i) specs.by_id.emplace(wl.dataset.records[i].id, wl.specs[i]);
    std::vector<const QueryRecord*> test = labeled_records(test_ds);
    const RCRankModel& model = *full_models[0];
    EndToEndResult trained =
        end_to_end_improvement([&](const QueryRecord& rec) { return model.predict(rec); }, test, specs);
    EndToEndResult best =
        end_to_end_improvement([](const QueryRecord& rec) { return *rec.impacts; }, test, specs);
    char detail[256];
    std::snprintf(detail, sizeof detail,
                  "trained model improvement %.2f%% (floor 15%%), oracle %.2f%% (must upper-bound), totals %.1fs -> "
                  "%.1fs over %d queries",
                  trained.improvement_pct, best.improvement_pct, trained.original_total_s, trained.revised_total_s,
                  trained.n_queries);
    report(7, trained.improvement_pct >= 15.0 && best.improvement_pct >= trained.improvement_pct - 1e-9,
           "end-to-end improvement loop", detail);
  }
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism and round trips
// ---------------------------------------------------------------------------

void criterion8() {
  fs::path dir = fs::temp_directory_path() / "rcrank_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const char* name) { return (dir / name).string(); };

  GenConfig gen;
  gen.total = 400;
  gen.labeled_target = 120;
  GeneratedWorkload a = generate_workload(gen, 7);
  GeneratedWorkload b = generate_workload(gen, 7);
  save_dataset(a.dataset, p("a.jsonl"));
  save_dataset(b.dataset, p("b.jsonl"));
  bool datasets_identical = slurp(p("a.jsonl")) == slurp(p("b.jsonl"));

  // dataset file round trip is bit-exact
  Dataset loaded = load_dataset(p("a.jsonl"));
  save_dataset(loaded, p("a2.jsonl"));
  bool dataset_roundtrip = slurp(p("a.jsonl")) == slurp(p("a2.jsonl"));

  auto run_small = [&](const char* model_out, const char* report_out) {
    Dataset ds = load_dataset(p("a.jsonl"));
    auto [train_ds, val_ds, test_ds] = partition_by_tags(ds);
    PipelineConfig cfg;
    cfg.model.enc.kpi_q = ds.kpi_q;
    cfg.model.enc.kpi_t = ds.kpi_t;
    cfg.model.r = ds.r();
    cfg.train.epochs = 4;
    cfg.train.batch = 32;
    cfg.train.seed = 5;
    cfg.pretrain.epochs = 1;
    cfg.pretrain.seed = 5;
    TrainedPipeline pipe = run_pipeline(train_ds, val_ds, cfg);
    pipe.model.save(p(model_out));
    MetricsReport rep = evaluate_model(pipe.model, test_ds, cfg.train.epsilon);
    rep.infer_s_per_query = 0.0;  // wall-clock timing is not part of the artifact
    write_metrics_json(rep, p(report_out));
  };
  run_small("m1.ckpt", "r1.json");
  run_small("m2.ckpt", "r2.json");
  bool checkpoints_identical = slurp(p("m1.ckpt")) == slurp(p("m2.ckpt"));
  bool reports_identical = slurp(p("r1.json")) == slurp(p("r2.json"));

  // checkpoint file round trip is bit-exact
  RCRankModel loaded_model = RCRankModel::load(p("m1.ckpt"));
  json meta = RCRankModel::peek_meta(p("m1.ckpt"));
  json extra = json::object();
  if (meta.contains("train")) extra["train"] = meta["train"];
  loaded_model.save(p("m3.ckpt"), extra);
  bool checkpoint_roundtrip = slurp(p("m1.ckpt")) == slurp(p("m3.ckpt"));

  fs::remove_all(dir);
  char detail[256];
  std::snprintf(detail, sizeof detail,
                "datasets identical: %s; checkpoint identical: %s; reports identical: %s; dataset round-trip: %s; "
                "checkpoint round-trip: %s",
                datasets_identical ? "yes" : "no", checkpoints_identical ? "yes" : "no",
                reports_identical ? "yes" : "no", dataset_roundtrip ? "yes" : "no",
                checkpoint_roundtrip ? "yes" : "no");
  report(8, datasets_identical && checkpoints_identical && reports_identical && dataset_roundtrip &&
                checkpoint_roundtrip,
         "determinism and round-trips", detail);
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;  // skips the trained-pipeline criteria
  auto t0 = Clock::now();
  criterion1();
  criterion2();
  criterion3();
  criterion8();
  if (!quick) criteria_4_to_7();
  int failures = 0;
  for (const Criterion& c : g_results) failures += c.pass ? 0 : 1;
  std::printf("%d/%zu criteria passed (%.0fs total)%s\n", static_cast<int>(g_results.size()) - failures,
              g_results.size(), seconds_since(t0), quick ? " [quick mode: criteria 4-7 skipped]" : "");
  return failures == 0 ? 0 : 1;
}
