#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "rcrank/harness.hpp"

using namespace rcrank;

namespace {

struct Fixture {
  GeneratedWorkload wl;
  PipelineConfig base;

  Fixture() {
    GenConfig gen;
    gen.total = 100;
    gen.labeled_target = 50;
    wl = generate_workload(gen, 31);
    base.model.enc.kpi_q = wl.dataset.kpi_q;
    base.model.enc.kpi_t = wl.dataset.kpi_t;
    base.model.r = wl.dataset.r();
    base.train.epochs = 2;
    base.train.batch = 16;
    base.pretrain.epochs = 1;
    base.pretrain.batch = 16;
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("variant names round trip and unknown names fail") {
  for (Variant v : {Variant::Full, Variant::Concat, Variant::NoGate, Variant::MseOnly, Variant::NoPretrain,
                    Variant::OnlySql, Variant::PlanKpiConcat, Variant::MainKpi})
    CHECK(variant_from_name(variant_name(v)) == v);
  CHECK_THROWS_AS(variant_from_name("bogus"), RcError);
}

TEST_CASE("run_variants produces one row per variant and seed, deterministically") {
  Fixture& f = fixture();
  VariantTable t1 = run_variants(f.wl.dataset, {Variant::Full}, {5}, f.base);
  REQUIRE(t1.rows.size() == 1);  // variant list of 1 -> table of 1 row
  CHECK(t1.rows[0].variant == "full");

  VariantTable t2 = run_variants(f.wl.dataset, {Variant::Full}, {5}, f.base);
  auto strip_timing = [](MetricsReport r) {
    r.train_s_per_epoch = 0.0;
    r.infer_s_per_query = 0.0;
    return r.to_json();
  };
  CHECK(strip_timing(t1.rows[0].report) == strip_timing(t2.rows[0].report));  // deterministic per seed

  VariantTable t3 = run_variants(f.wl.dataset, {Variant::Concat, Variant::OnlyLog}, {5, 6}, f.base);
  REQUIRE(t3.rows.size() == 4);
  auto aggs = t3.aggregates();
  REQUIRE(aggs.size() == 2);
  CHECK(aggs[0].n_seeds == 2);
  CHECK(!t3.to_text().empty());
  CHECK(t3.to_csv().find("concat") != std::string::npos);
  write_variant_svg(t3, "top1_acc", "variants.svg");
  std::ifstream svg("variants.svg");
  std::string content(std::istreambuf_iterator<char>(svg), {});
  CHECK(content.find("<svg") != std::string::npos);
  std::remove("variants.svg");
}

TEST_CASE("lambda_sweep emits one report per value") {
  Fixture& f = fixture();
  std::vector<LambdaRow> rows = lambda_sweep(f.wl.dataset, {1.0, 7.0}, 3, f.base);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].lambda == 1.0);  // lambda column echoes inputs
  CHECK(rows[1].lambda == 7.0);
  json j = lambda_rows_to_json(rows);
  CHECK(j.size() == 2);
}

TEST_CASE("end_to_end_improvement") {
  Fixture& f = fixture();
  save_specs(f.wl, "harness_specs.jsonl");
  SpecsFile specs = load_specs("harness_specs.jsonl");
  auto [train_ds, val_ds, test_ds] = partition_by_tags(f.wl.dataset);
  std::vector<const QueryRecord*> test = labeled_records(test_ds);
  REQUIRE(!test.empty());

  // the oracle estimator: estimates = labels
  auto oracle = [](const QueryRecord& rec) { return *rec.impacts; };
  EndToEndResult best = end_to_end_improvement(oracle, test, specs);
  CHECK(best.n_queries == static_cast<int>(test.size()));
  CHECK(best.original_total_s > best.revised_total_s);

  // a fixed wrong-ish estimator cannot beat the oracle
  auto constant = [&](const QueryRecord& rec) {
    std::vector<double> v(rec.impacts->size(), 0.0);
    v[1] = 1.0;
    return v;
  };
  EndToEndResult fixed = end_to_end_improvement(constant, test, specs);
  CHECK(fixed.improvement_pct <= best.improvement_pct + 1e-9);
  CHECK(fixed.revised_total_s <= fixed.original_total_s + 1e-9);  // revisions never hurt, noiseless

  // specs unavailable -> Unsupported
  SpecsFile empty;
  empty.db = specs.db;
  empty.cost = specs.cost;
  CHECK_THROWS_AS(end_to_end_improvement(oracle, test, empty), RcError);
  std::remove("harness_specs.jsonl");
}

TEST_CASE("oracle improvement matches per-cause best revision") {
  Fixture& f = fixture();
  save_specs(f.wl, "harness_specs2.jsonl");
  SpecsFile specs = load_specs("harness_specs2.jsonl");
  auto [train_ds, val_ds, test_ds] = partition_by_tags(f.wl.dataset);
  std::vector<const QueryRecord*> test = labeled_records(test_ds);
  auto oracle = [](const QueryRecord& rec) { return *rec.impacts; };
  EndToEndResult res = end_to_end_improvement(oracle, test, specs);

  double orig_total = 0.0, revised_total = 0.0;
  for (const QueryRecord* rec : test) {
    const QuerySpec& spec = specs.by_id.at(rec->id);
    double orig = simulate_runtime(spec, specs.db, specs.cost, true);
    int best_rc = argmax_index(*rec->impacts);
    double revised = simulate_runtime(revise(spec, best_rc), specs.db, specs.cost, true);
    orig_total += orig;
    revised_total += revised;
  }
  CHECK(res.original_total_s == doctest::Approx(orig_total).epsilon(1e-12));
  CHECK(res.revised_total_s == doctest::Approx(revised_total).epsilon(1e-12));
  std::remove("harness_specs2.jsonl");
}
