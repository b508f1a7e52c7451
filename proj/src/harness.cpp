#include "rcrank/harness.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace rcrank {

namespace {

struct VariantInfo {
  Variant v;
  const char* name;
};

constexpr VariantInfo kVariants[] = {
    {Variant::Full, "full"},
    {Variant::Concat, "concat"},
    {Variant::NoGate, "no_gate"},
    {Variant::MseOnly, "mse_only"},
    {Variant::NoPretrain, "no_pretrain"},
    {Variant::OnlySql, "only_sql"},
    {Variant::OnlyPlan, "only_plan"},
    {Variant::OnlyLog, "only_log"},
    {Variant::OnlyKpi, "only_kpi"},
    {Variant::PlanKpiConcat, "plan_kpi_concat"},
    {Variant::MainSql, "main_sql"},
    {Variant::MainPlan, "main_plan"},
    {Variant::MainLog, "main_log"},
    {Variant::MainKpi, "main_kpi"},
};

}  // namespace

const char* variant_name(Variant v) {
  for (const auto& info : kVariants)
    if (info.v == v) return info.name;
  return "unknown";
}

Variant variant_from_name(const std::string& name) {
  for (const auto& info : kVariants)
    if (name == info.name) return info.v;
  raise(ErrorCode::InvalidConfig, "unknown variant: " + name);
}

std::vector<Variant> default_variants() {
  return {Variant::Full, Variant::Concat, Variant::NoGate, Variant::MseOnly, Variant::NoPretrain};
}

void apply_variant(Variant v, PipelineConfig& cfg) {
  auto single = [&](Modality m) {
    cfg.model.fusion = FusionMode::Direct;
    cfg.model.active = {false, false, false, false};
    cfg.model.active[static_cast<size_t>(m)] = true;
    cfg.model.main_modality = m;
  };
  switch (v) {
    case Variant::Full:
      break;
    case Variant::Concat:
      cfg.model.fusion = FusionMode::Concat;
      break;
    case Variant::NoGate:
      // Without gates a shared head would emit identical estimates for every
      // cause, so this ablation keeps per-cause heads.
      cfg.model.gates_enabled = false;
      cfg.model.per_rc_heads = true;
      break;
    case Variant::MseOnly:
      cfg.train.lambda = 0.0;
      break;
    case Variant::NoPretrain:
      cfg.use_pretraining = false;
      break;
    case Variant::OnlySql:
      single(Modality::SQL);
      break;
    case Variant::OnlyPlan:
      single(Modality::Plan);
      break;
    case Variant::OnlyLog:
      single(Modality::Log);
      break;
    case Variant::OnlyKpi:
      single(Modality::KPI);
      break;
    case Variant::PlanKpiConcat:
      cfg.model.fusion = FusionMode::Direct;
      cfg.model.active = {false, true, false, true};
      cfg.model.main_modality = Modality::Plan;
      break;
    case Variant::MainSql:
      cfg.model.main_modality = Modality::SQL;
      break;
    case Variant::MainPlan:
      cfg.model.main_modality = Modality::Plan;
      break;
    case Variant::MainLog:
      cfg.model.main_modality = Modality::Log;
      break;
    case Variant::MainKpi:
      cfg.model.main_modality = Modality::KPI;
      break;
  }
}

TrainedPipeline run_pipeline(const Dataset& train_ds, const Dataset& val_ds, const PipelineConfig& cfg,
                             const RCRankModel* shared_pretrained) {
  RCRankModel model(cfg.model, train_ds.root_cause_catalog, train_ds.norm);
  model.init_weights(cfg.train.seed);
  PretrainResult pre;
  if (cfg.use_pretraining) {
    if (shared_pretrained) {
      for (const Parameter* p : shared_pretrained->params().ordered()) {
        bool enc = p->name.starts_with("enc_") || p->name.starts_with("dec_i/") || p->name.starts_with("agg/");
        if (!enc) continue;
        Parameter* dst = model.params().find(p->name);
        if (dst && dst->value.same_shape(p->value)) dst->value = p->value;
      }
    } else {
      PretrainConfig pc = cfg.pretrain;
      pc.seed = cfg.train.seed;
      pre = run_pretraining(model, train_ds, pc);
    }
  }
  TrainResult tr = train(model, train_ds, val_ds, cfg.train);
  return {std::move(model), std::move(tr), std::move(pre)};
}

MetricsReport evaluate_model(const RCRankModel& model, const Dataset& test_ds, double eps, int threads) {
  std::vector<const QueryRecord*> records = labeled_records(test_ds);
  auto t0 = std::chrono::steady_clock::now();
  ImpactMatrix est = predict_all(model, records, threads);
  auto t1 = std::chrono::steady_clock::now();
  MetricsReport rep = compute_metrics(truth_matrix(records), est, eps);
  if (!records.empty())
    rep.infer_s_per_query = std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(records.size());
  return rep;
}

VariantTable run_variants(const Dataset& dataset, const std::vector<Variant>& variants,
                          const std::vector<uint64_t>& seeds, const PipelineConfig& base) {
  auto [train_ds, val_ds, test_ds] = partition_by_tags(dataset);
  VariantTable table;
  for (uint64_t seed : seeds) {
    // Pretraining is identical for every variant of a seed; run it once.
    PipelineConfig probe = base;
    probe.train.seed = seed;
    std::unique_ptr<RCRankModel> pretrained;
    bool any_pretrained = std::any_of(variants.begin(), variants.end(), [&](Variant v) {
      return v != Variant::NoPretrain;
    });
    if (base.use_pretraining && any_pretrained) {
      auto shared = std::make_unique<RCRankModel>(probe.model, train_ds.root_cause_catalog, train_ds.norm);
      shared->init_weights(seed);
      PretrainConfig pc = base.pretrain;
      pc.seed = seed;
      run_pretraining(*shared, train_ds, pc);
      pretrained = std::move(shared);
    }
    for (Variant v : variants) {
      PipelineConfig cfg = base;
      cfg.train.seed = seed;
      apply_variant(v, cfg);
      TrainedPipeline pipe =
          run_pipeline(train_ds, val_ds, cfg, cfg.use_pretraining ? pretrained.get() : nullptr);
      VariantRow row;
      row.variant = variant_name(v);
      row.seed = seed;
      row.report = evaluate_model(pipe.model, test_ds, cfg.train.epsilon, cfg.train.threads);
      row.report.train_s_per_epoch = pipe.train_result.train_s_per_epoch;
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

std::vector<LambdaRow> lambda_sweep(const Dataset& dataset, const std::vector<double>& values, uint64_t seed,
                                    const PipelineConfig& base) {
  auto [train_ds, val_ds, test_ds] = partition_by_tags(dataset);
  std::unique_ptr<RCRankModel> pretrained;
  if (base.use_pretraining) {
    PipelineConfig probe = base;
    auto shared = std::make_unique<RCRankModel>(probe.model, train_ds.root_cause_catalog, train_ds.norm);
    shared->init_weights(seed);
    PretrainConfig pc = base.pretrain;
    pc.seed = seed;
    run_pretraining(*shared, train_ds, pc);
    pretrained = std::move(shared);
  }
  std::vector<LambdaRow> rows;
  for (double lambda : values) {
    PipelineConfig cfg = base;
    cfg.train.seed = seed;
    cfg.train.lambda = lambda;
    TrainedPipeline pipe = run_pipeline(train_ds, val_ds, cfg, pretrained.get());
    LambdaRow row;
    row.lambda = lambda;
    row.report = evaluate_model(pipe.model, test_ds, cfg.train.epsilon, cfg.train.threads);
    rows.push_back(std::move(row));
  }
  return rows;
}

json lambda_rows_to_json(const std::vector<LambdaRow>& rows) {
  json j = json::array();
  for (const auto& row : rows) {
    json e;
    e["lambda"] = row.lambda;
    e["report"] = row.report.to_json();
    j.push_back(e);
  }
  return j;
}

EndToEndResult end_to_end_improvement(const std::function<std::vector<double>(const QueryRecord&)>& estimator,
                                      const std::vector<const QueryRecord*>& test_records, const SpecsFile& specs) {
  EndToEndResult out;
  for (const QueryRecord* rec : test_records) {
    auto it = specs.by_id.find(rec->id);
    if (it == specs.by_id.end())
      raise(ErrorCode::Unsupported, "no simulator spec for record " + rec->id + "; end-to-end loop needs synthetic data");
    std::vector<double> estimates = estimator(*rec);
    int top1 = argmax_index(estimates);
    double original = simulate_runtime(it->second, specs.db, specs.cost, true);
    double revised = simulate_runtime(revise(it->second, top1), specs.db, specs.cost, true);
    out.original_total_s += original;
    out.revised_total_s += revised;
    out.n_queries += 1;
  }
  if (out.original_total_s > 0.0)
    out.improvement_pct = 100.0 * (out.original_total_s - out.revised_total_s) / out.original_total_s;
  return out;
}

std::vector<VariantTable::Aggregate> VariantTable::aggregates() const {
  std::vector<Aggregate> out;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricsReport*>> groups;
  for (const VariantRow& row : rows) {
    if (!groups.count(row.variant)) order.push_back(row.variant);
    groups[row.variant].push_back(&row.report);
  }
  for (const std::string& name : order) {
    const auto& reports = groups[name];
    Aggregate agg;
    agg.variant = name;
    agg.n_seeds = static_cast<int>(reports.size());
    auto stat = [&](auto getter, double& mean_out, double& std_out) {
      double mean = 0.0;
      for (const MetricsReport* r : reports) mean += getter(*r);
      mean /= static_cast<double>(reports.size());
      double var = 0.0;
      for (const MetricsReport* r : reports) var += (getter(*r) - mean) * (getter(*r) - mean);
      var /= static_cast<double>(reports.size());
      mean_out = mean;
      std_out = std::sqrt(var);
    };
    stat([](const MetricsReport& r) { return r.v_acc; }, agg.mean.v_acc, agg.stddev.v_acc);
    stat([](const MetricsReport& r) { return r.top1_acc; }, agg.mean.top1_acc, agg.stddev.top1_acc);
    stat([](const MetricsReport& r) { return r.mse_mean; }, agg.mean.mse_mean, agg.stddev.mse_mean);
    stat([](const MetricsReport& r) { return r.mc_acc; }, agg.mean.mc_acc, agg.stddev.mc_acc);
    stat([](const MetricsReport& r) { return r.tau; }, agg.mean.tau, agg.stddev.tau);
    stat([](const MetricsReport& r) { return r.top1_ir; }, agg.mean.top1_ir, agg.stddev.top1_ir);
    out.push_back(std::move(agg));
  }
  return out;
}

json VariantTable::to_json() const {
  json j;
  json rows_json = json::array();
  for (const VariantRow& row : rows) {
    json e;
    e["variant"] = row.variant;
    e["seed"] = row.seed;
    e["report"] = row.report.to_json();
    rows_json.push_back(e);
  }
  j["rows"] = rows_json;
  json aggs = json::array();
  for (const Aggregate& a : aggregates()) {
    json e;
    e["variant"] = a.variant;
    e["n_seeds"] = a.n_seeds;
    e["mean"] = a.mean.to_json();
    e["stddev"] = a.stddev.to_json();
    aggs.push_back(e);
  }
  j["aggregates"] = aggs;
  return j;
}

std::string VariantTable::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,v_acc,top1_acc,mse_mean,mse_std,mc_acc,tau,top1_ir\n";
  for (const VariantRow& r : rows) {
    os << r.variant << ',' << r.seed << ',' << r.report.v_acc << ',' << r.report.top1_acc << ',' << r.report.mse_mean
       << ',' << r.report.mse_std << ',' << r.report.mc_acc << ',' << r.report.tau << ',' << r.report.top1_ir << '\n';
  }
  return os.str();
}

std::string VariantTable::to_text() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-5s %-15s %-15s %-15s %-15s %-15s %-15s\n", "variant", "seeds", "V-ACC",
                "Top1-ACC", "MSE", "MC-ACC", "Tau", "Top1-IR");
  os << line;
  for (const Aggregate& a : aggregates()) {
    auto cell = [](double mean, double sd) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f±%.4f", mean, sd);
      return std::string(buf);
    };
    std::snprintf(line, sizeof line, "%-16s %-5d %-15s %-15s %-15s %-15s %-15s %-15s\n", a.variant.c_str(), a.n_seeds,
                  cell(a.mean.v_acc, a.stddev.v_acc).c_str(), cell(a.mean.top1_acc, a.stddev.top1_acc).c_str(),
                  cell(a.mean.mse_mean, a.stddev.mse_mean).c_str(), cell(a.mean.mc_acc, a.stddev.mc_acc).c_str(),
                  cell(a.mean.tau, a.stddev.tau).c_str(), cell(a.mean.top1_ir, a.stddev.top1_ir).c_str());
    os << line;
  }
  return os.str();
}

void write_variant_svg(const VariantTable& table, const std::string& metric, const std::string& path) {
  auto getter = [&](const MetricsReport& r) -> double {
    if (metric == "v_acc") return r.v_acc;
    if (metric == "top1_acc") return r.top1_acc;
    if (metric == "mse_mean") return r.mse_mean;
    if (metric == "mc_acc") return r.mc_acc;
    if (metric == "tau") return r.tau;
    if (metric == "top1_ir") return r.top1_ir;
    raise(ErrorCode::InvalidConfig, "unknown metric: " + metric);
  };
  auto aggs = table.aggregates();
  double max_v = 1e-9;
  for (const auto& a : aggs) max_v = std::max(max_v, getter(a.mean));
  const int bar_w = 60, gap = 20, h = 220, label_h = 40;
  int w = gap + static_cast<int>(aggs.size()) * (bar_w + gap);
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + label_h + 20 << "\">\n";
  os << "<text x=\"4\" y=\"14\" font-size=\"12\">" << metric << "</text>\n";
  int x = gap;
  for (const auto& a : aggs) {
    int bar_h = static_cast<int>(h * getter(a.mean) / max_v);
    if (bar_h < 1) bar_h = 1;
    os << "<rect x=\"" << x << "\" y=\"" << 20 + h - bar_h << "\" width=\"" << bar_w << "\" height=\"" << bar_h
       << "\" fill=\"#4878a8\"/>\n";
    os << "<text x=\"" << x << "\" y=\"" << 20 + h + 14 << "\" font-size=\"10\">" << a.variant << "</text>\n";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", getter(a.mean));
    os << "<text x=\"" << x << "\" y=\"" << 20 + h - bar_h - 4 << "\" font-size=\"10\">" << buf << "</text>\n";
    x += bar_w + gap;
  }
  os << "</svg>\n";
}

}  // namespace rcrank
