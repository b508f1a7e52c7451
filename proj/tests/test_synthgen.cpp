#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "rcrank/synthgen.hpp"

using namespace rcrank;

namespace {

QuerySpec join_spec(const DbState& db, int r) {
  QuerySpec s;
  s.kind = TemplateKind::Join2;
  s.template_id = 2;
  s.tables = {"orders", "users"};
  s.join_count = 1;
  s.predicate_columns = {"qty", "region"};
  s.selectivities = {0.2, 0.3};
  s.defects.assign(static_cast<size_t>(r), 0.0);
  s.noise_seed = 424242;
  (void)db;
  return s;
}

}  // namespace

TEST_CASE("simulate_runtime basics") {
  DbState db = make_db_state(1);
  CostModel cm;
  QuerySpec s = join_spec(db, 5);

  // all severities zero, noiseless: runtime is exactly the sum of base costs
  BuiltQuery built = build_query(s, db, cm);
  double base_sum = 0.0;
  for (const ExecOp& op : built.ops) {
    CHECK(op.mult == 1.0);
    base_sum += op.base_cost;
  }
  CHECK(simulate_runtime(s, db, cm, true) == doctest::Approx(base_sum).epsilon(1e-12));

  // index defect on a large scan strictly increases runtime
  QuerySpec degraded = s;
  degraded.defects[kRcIndex] = 1.0;
  CHECK(simulate_runtime(degraded, db, cm, true) > simulate_runtime(s, db, cm, true));

  // noisy mode is deterministic per spec seed
  CHECK(simulate_runtime(s, db, cm, false) == simulate_runtime(s, db, cm, false));

  // unknown table
  QuerySpec bad = s;
  bad.tables[0] = "nonexistent";
  CHECK_THROWS_AS(simulate_runtime(bad, db, cm, true), RcError);
}

TEST_CASE("monotonicity: severity never decreases noiseless runtime") {
  DbState db = make_db_state(3);
  CostModel cm;
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    QuerySpec s = join_spec(db, 10);
    s.kind = trial % 2 == 0 ? TemplateKind::Join3 : TemplateKind::Join2;
    if (s.kind == TemplateKind::Join3) {
      s.tables = {"orders", "users", "lineitem"};
      s.join_count = 2;
      s.predicate_columns = {"qty", "region", ""};
      s.selectivities = {0.2, 0.3, 0.1};
    }
    s.noise_seed = rng.next_u64();
    for (auto& d : s.defects) d = rng.bernoulli(0.5) ? rng.uniform(0.0, 0.8) : 0.0;
    s.rewrite_waste = s.severity(kRcQueryRewrite);
    double before = simulate_runtime(s, db, cm, true);
    int rc = static_cast<int>(rng.uniform_int(s.defects.size()));
    QuerySpec bumped = s;
    bumped.defects[static_cast<size_t>(rc)] = std::min(1.0, s.defects[static_cast<size_t>(rc)] + rng.uniform(0.05, 0.4));
    bumped.rewrite_waste = bumped.severity(kRcQueryRewrite);
    double after = simulate_runtime(bumped, db, cm, true);
    CHECK(after >= before - 1e-12);
  }
}

TEST_CASE("revise semantics") {
  DbState db = make_db_state(1);
  CostModel cm;
  QuerySpec s = join_spec(db, 5);
  s.defects[kRcStatistics] = 0.6;
  s.defects[kRcJoinOrder] = 0.4;

  QuerySpec once = revise(s, kRcStatistics);
  QuerySpec twice = revise(once, kRcStatistics);
  CHECK(once.defects == twice.defects);                      // idempotent
  CHECK(once.defects[kRcJoinOrder] == doctest::Approx(0.4));  // others untouched
  CHECK(once.defects[kRcStatistics] == 0.0);

  // no defects: revise is the identity on runtime
  QuerySpec clean = join_spec(db, 5);
  CHECK(simulate_runtime(revise(clean, kRcIndex), db, cm, true) ==
        doctest::Approx(simulate_runtime(clean, db, cm, true)).epsilon(1e-12));
}

TEST_CASE("impact formula and oracle") {
  // worked example: 1.5s -> 0.67s is a 55.33% improvement
  CHECK(impact_from_runtimes(1.5, 0.67) == doctest::Approx((1.5 - 0.67) / 1.5).epsilon(1e-12));
  CHECK_THROWS_AS(impact_from_runtimes(0.0, 0.0), RcError);

  DbState db = make_db_state(1);
  CostModel cm;
  QuerySpec s = join_spec(db, 5);
  s.defects[kRcJoinOrder] = 0.7;

  // defect absent -> impact 0
  CHECK(compute_impact(s, kRcDistributionKey, db, cm) == doctest::Approx(0.0));

  // full catalog equals independently re-running the simulator per revision
  std::vector<double> y = compute_impact_vector(s, db, cm, 5);
  double orig = simulate_runtime(s, db, cm, true);
  for (int j = 0; j < 5; ++j) {
    double revised = simulate_runtime(revise(s, j), db, cm, true);
    CHECK(y[static_cast<size_t>(j)] == doctest::Approx((orig - revised) / orig).epsilon(1e-12));
  }
  CHECK(y[kRcJoinOrder] > 0.0);
}

TEST_CASE("generate_workload determinism and labeling") {
  GenConfig cfg;
  cfg.total = 80;
  cfg.labeled_target = 30;
  GeneratedWorkload a = generate_workload(cfg, 42);
  GeneratedWorkload b = generate_workload(cfg, 42);

  save_dataset(a.dataset, "wl_a.jsonl");
  save_dataset(b.dataset, "wl_b.jsonl");
  auto slurp = [](const char* p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(slurp("wl_a.jsonl") == slurp("wl_b.jsonl"));  // bitwise identical under one seed
  GeneratedWorkload c = generate_workload(cfg, 43);
  save_dataset(c.dataset, "wl_c.jsonl");
  CHECK(slurp("wl_a.jsonl") != slurp("wl_c.jsonl"));
  for (const char* p : {"wl_a.jsonl", "wl_b.jsonl", "wl_c.jsonl"}) std::remove(p);

  CHECK(a.dataset.records.size() == 80);
  CHECK(a.dataset.labeled_count() == 30);
  CHECK(a.specs.size() == a.dataset.records.size());

  int no_valid = 0;
  for (size_t i = 0; i < a.dataset.records.size(); ++i) {
    const QueryRecord& rec = a.dataset.records[i];
    if (!rec.labeled()) continue;
    CHECK(rec.runtime_s > cfg.delta);  // every labeled record is slow
    double top = 0.0;
    for (size_t j = 0; j < rec.impacts->size(); ++j) {
      double y = (*rec.impacts)[j];
      double sev = a.specs[i].defects[j];
      CHECK(y <= 1.0);
      CHECK(y >= 0.0);                                   // noiseless labels are non-negative
      CHECK(std::abs(y - cfg.epsilon) >= cfg.eta - 1e-12);  // eta-separated from the threshold
      if (sev > 0.0) {
        CHECK(y > 0.0);  // planted-defect recoverability
      } else {
        CHECK(y == doctest::Approx(0.0));
      }
      top = std::max(top, y);
    }
    if (top < cfg.epsilon) ++no_valid;
  }
  CHECK(no_valid < 10);  // most labeled records carry at least one valid cause

  // oracle re-evaluation: stored impacts equal compute_impact re-run per cause
  int checked = 0;
  for (size_t i = 0; i < a.dataset.records.size() && checked < 20; ++i) {
    if (!a.dataset.records[i].labeled()) continue;
    std::vector<double> y = compute_impact_vector(a.specs[i], a.db, a.cost, 5);
    for (size_t j = 0; j < y.size(); ++j) CHECK((*a.dataset.records[i].impacts)[j] == doctest::Approx(y[j]).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked == 20);

  // cross-modal consistency: referenced tables appear in SQL and as scan labels
  for (size_t i = 0; i < a.dataset.records.size(); ++i) {
    const QueryRecord& rec = a.dataset.records[i];
    std::set<std::string> scan_labels;
    for (const PlanNode& n : rec.plan.nodes())
      if (n.op == OpKind::Scan || n.op == OpKind::IndexScan || n.op == OpKind::SubqueryScan ||
          n.op == OpKind::Insert || n.op == OpKind::Update)
        scan_labels.insert(n.label);
    for (const std::string& t : a.specs[i].tables) {
      CHECK(rec.sql_text.find(t) != std::string::npos);
      CHECK(scan_labels.count(t) == 1);
    }
  }

  // split tags cover labeled records by the 8:1:1 default
  int n_train = 0, n_val = 0, n_test = 0, n_pre = 0;
  for (const auto& rec : a.dataset.records) {
    if (rec.split == "train") ++n_train;
    if (rec.split == "val") ++n_val;
    if (rec.split == "test") ++n_test;
    if (rec.split == "pretrain") ++n_pre;
  }
  CHECK(n_train == 24);
  CHECK(n_val == 3);
  CHECK(n_test == 3);
  CHECK(n_pre == 50);

  // infeasible config
  GenConfig bad = cfg;
  bad.labeled_target = 200;
  CHECK_THROWS_AS(generate_workload(bad, 1), RcError);
}

TEST_CASE("specs sidecar round trip") {
  GenConfig cfg;
  cfg.total = 30;
  cfg.labeled_target = 10;
  GeneratedWorkload wl = generate_workload(cfg, 7);
  save_specs(wl, "specs_rt.jsonl");
  SpecsFile sf = load_specs("specs_rt.jsonl");
  CHECK(sf.by_id.size() == wl.specs.size());
  CHECK(sf.db.tables.size() == wl.db.tables.size());
  for (size_t i = 0; i < wl.specs.size(); ++i) {
    const QuerySpec& orig = wl.specs[i];
    const QuerySpec& rt = sf.by_id.at(wl.dataset.records[i].id);
    CHECK(rt.tables == orig.tables);
    CHECK(rt.defects == orig.defects);
    CHECK(rt.noise_seed == orig.noise_seed);
    CHECK(simulate_runtime(rt, sf.db, sf.cost, true) ==
          doctest::Approx(simulate_runtime(orig, wl.db, wl.cost, true)).epsilon(1e-12));
  }
  std::remove("specs_rt.jsonl");
}
