// rcrank: train and serve the multimodal slow-query root-cause ranking model,
// generate synthetic workloads, and run the evaluation harness.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rcrank/harness.hpp"
#include "rcrank/runconfig.hpp"

namespace fs = std::filesystem;
using namespace rcrank;

namespace {

void require_file(const std::string& path) {
  if (!fs::exists(path)) raise(ErrorCode::MissingFile, path);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile:
      return 2;
    case ErrorCode::NumericalError:
      return 4;
    case ErrorCode::Internal:
      return 1;
    default:
      return 3;  // validation failures
  }
}

RunConfig load_run_config(const std::string& config_path, const std::vector<std::string>& overrides, uint64_t seed,
                          bool seed_given, int threads) {
  RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
  for (const std::string& kv : overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) raise(ErrorCode::InvalidConfig, "--set expects key=value, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed_given) cfg.set("train.seed", std::to_string(seed));
  if (threads > 0) cfg.set("threads", std::to_string(threads));
  return cfg;
}

// The oracle stub returns labels as estimates (for harness sanity checks).
constexpr const char* kOracleModel = "oracle";

std::vector<const QueryRecord*> eval_records(const Dataset& ds) {
  std::vector<const QueryRecord*> test;
  for (const QueryRecord& rec : ds.records)
    if (rec.labeled() && rec.split == "test") test.push_back(&rec);
  if (!test.empty()) return test;
  return labeled_records(ds);
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out, uint64_t seed) {
  GenConfig gen = cfg.gen_config();
  GeneratedWorkload wl = generate_workload(gen, seed);
  save_dataset(wl.dataset, out);
  save_specs(wl, out + ".specs.jsonl");
  cfg.echo(out + ".resolved.cfg");
  std::cout << "wrote " << wl.dataset.records.size() << " records (" << wl.dataset.labeled_count()
            << " labeled slow queries) to " << out << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& data, int epochs_flag, const std::string& out) {
  require_file(data);
  Dataset ds = load_dataset(data);
  auto [train_ds, val_ds, test_ds] = partition_by_tags(ds);
  RCRankModel model(cfg.model_config(ds), ds.root_cause_catalog, train_ds.norm);
  PretrainConfig pc = cfg.pretrain_config();
  if (epochs_flag > 0) pc.epochs = epochs_flag;
  model.init_weights(pc.seed);
  PretrainResult result = run_pretraining(model, train_ds, pc);
  model.save_encoder_checkpoint(out);
  write_pretrain_log_csv(result, out + ".log.csv");
  cfg.echo(out + ".resolved.cfg");
  std::cout << "pretrained " << pc.epochs << " epochs on " << train_ds.records.size() << " queries; final losses"
            << " sql=" << result.log.back().l_sql << " plan=" << result.log.back().l_plan
            << " log=" << result.log.back().l_log << " kpis=" << result.log.back().l_kpis << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data, const std::string& pretrained, const std::string& out) {
  require_file(data);
  if (!pretrained.empty()) require_file(pretrained);
  Dataset ds = load_dataset(data);
  auto [train_ds, val_ds, test_ds] = partition_by_tags(ds);
  TrainConfig tc = cfg.train_config();
  RCRankModel model(cfg.model_config(ds), ds.root_cause_catalog, train_ds.norm);
  model.init_weights(tc.seed);
  if (!pretrained.empty()) model.load_encoder_checkpoint(pretrained);
  TrainResult result = train(model, train_ds, val_ds, tc);
  json extra;
  extra["train"] = tc.to_json();
  model.save(out, extra);
  write_train_log_csv(result, out + ".log.csv");
  cfg.echo(out + ".resolved.cfg");
  std::cout << "trained " << tc.epochs << " epochs; best val Top1-ACC " << result.best_val_top1 << " at epoch "
            << result.best_epoch << "; " << result.train_s_per_epoch << " s/epoch\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& model_path, const std::string& data, const std::string& report,
             const std::string& specs_path) {
  require_file(data);
  Dataset ds = load_dataset(data);
  std::vector<const QueryRecord*> records = eval_records(ds);
  if (records.empty()) raise(ErrorCode::InsufficientData, "no labeled records to evaluate");

  double eps = cfg.train_config().epsilon;
  MetricsReport rep;
  std::function<std::vector<double>(const QueryRecord&)> estimator;
  if (model_path == kOracleModel) {
    estimator = [](const QueryRecord& rec) { return *rec.impacts; };
    ImpactMatrix est;
    for (const QueryRecord* rec : records) est.push_back(*rec->impacts);
    rep = compute_metrics(truth_matrix(records), est, eps);
  } else {
    require_file(model_path);
    RCRankModel model = RCRankModel::load(model_path);
    json meta = RCRankModel::peek_meta(model_path);
    if (meta.contains("train")) eps = TrainConfig::from_json(meta["train"]).epsilon;
    auto t0 = std::chrono::steady_clock::now();
    ImpactMatrix est = predict_all(model, records, cfg.train_config().threads);
    auto t1 = std::chrono::steady_clock::now();
    rep = compute_metrics(truth_matrix(records), est, eps);
    rep.infer_s_per_query = std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(records.size());
    estimator = [m = std::make_shared<RCRankModel>(std::move(model))](const QueryRecord& rec) {
      return m->predict(rec);
    };
  }
  json out = rep.to_json();
  if (!specs_path.empty()) {
    require_file(specs_path);
    SpecsFile specs = load_specs(specs_path);
    EndToEndResult e2e = end_to_end_improvement(estimator, records, specs);
    out["end_to_end"] = {{"original_total_s", e2e.original_total_s},
                         {"revised_total_s", e2e.revised_total_s},
                         {"improvement_pct", e2e.improvement_pct},
                         {"n_queries", e2e.n_queries}};
  }
  {
    std::ofstream os(report, std::ios::trunc);
    if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + report);
    os << out.dump(2) << '\n';
  }
  write_metrics_csv(rep, report + ".csv");
  cfg.echo(report + ".resolved.cfg");
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_diagnose(const std::string& model_path, const std::string& query_path, const std::string& out) {
  require_file(model_path);
  require_file(query_path);
  RCRankModel model = RCRankModel::load(model_path);
  double eps = 0.10;
  json meta = RCRankModel::peek_meta(model_path);
  if (meta.contains("train")) eps = TrainConfig::from_json(meta["train"]).epsilon;

  std::ifstream is(query_path);
  std::string line;
  json j;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      raise(ErrorCode::ParseError, std::string("query file: ") + e.what());
    }
    break;
  }
  if (j.is_null()) raise(ErrorCode::ParseError, "query file holds no record");
  if (j.contains("catalog")) raise(ErrorCode::InvalidInput, "expected a single record, found a dataset header");
  QueryRecord rec = record_from_json(j, static_cast<int>(model.catalog().size()), 1);
  RankedDiagnosis diag = diagnose(model, rec, eps);
  std::cout << diag.to_json().dump(2) << "\n" << diag.to_table();
  if (!out.empty()) {
    std::ofstream os(out, std::ios::trunc);
    os << diag.to_json().dump(2) << '\n';
  }
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& data, const std::string& variants_arg,
               const std::string& seeds_arg, const std::string& out_prefix) {
  require_file(data);
  Dataset ds = load_dataset(data);
  std::vector<Variant> variants;
  if (variants_arg == "default" || variants_arg.empty()) {
    variants = default_variants();
  } else {
    std::stringstream ss(variants_arg);
    std::string name;
    while (std::getline(ss, name, ',')) variants.push_back(variant_from_name(name));
  }
  std::vector<uint64_t> seeds;
  {
    std::stringstream ss(seeds_arg);
    std::string s;
    while (std::getline(ss, s, ',')) seeds.push_back(std::stoull(s));
  }
  if (seeds.empty()) raise(ErrorCode::InvalidConfig, "no seeds given");
  VariantTable table = run_variants(ds, variants, seeds, cfg.pipeline_config(ds));
  std::cout << table.to_text();
  {
    std::ofstream os(out_prefix + ".json", std::ios::trunc);
    os << table.to_json().dump(2) << '\n';
  }
  {
    std::ofstream os(out_prefix + ".csv", std::ios::trunc);
    os << table.to_csv();
  }
  {
    std::ofstream os(out_prefix + ".txt", std::ios::trunc);
    os << table.to_text();
  }
  for (const char* metric : {"v_acc", "top1_acc", "mc_acc", "tau", "top1_ir"})
    write_variant_svg(table, metric, out_prefix + "." + metric + ".svg");
  cfg.echo(out_prefix + ".resolved.cfg");
  return 0;
}

int cmd_sweep_lambda(const RunConfig& cfg, const std::string& data, const std::string& values_arg,
                     const std::string& out) {
  require_file(data);
  Dataset ds = load_dataset(data);
  std::vector<double> values;
  std::stringstream ss(values_arg);
  std::string s;
  while (std::getline(ss, s, ',')) values.push_back(std::stod(s));
  if (values.empty()) raise(ErrorCode::InvalidConfig, "no lambda values given");
  std::vector<LambdaRow> rows = lambda_sweep(ds, values, cfg.train_config().seed, cfg.pipeline_config(ds));
  json j = lambda_rows_to_json(rows);
  std::cout << "lambda   V-ACC   Top1-ACC  MC-ACC   Tau      Top1-IR\n";
  for (const auto& row : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-8.2f %-7.4f %-9.4f %-8.4f %-8.4f %-8.4f\n", row.lambda, row.report.v_acc,
                  row.report.top1_acc, row.report.mc_acc, row.report.tau, row.report.top1_ir);
    std::cout << buf;
  }
  std::ofstream os(out, std::ios::trunc);
  os << j.dump(2) << '\n';
  cfg.echo(out + ".resolved.cfg");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal root-cause ranking for slow database queries"};
  app.require_subcommand(1);

  std::string config_path, data, out, model_path, report, query_path, specs_path, pretrained;
  std::string variants_arg = "default", seeds_arg = "1,2,3", values_arg = "1,3,5,7,10";
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  int epochs_flag = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key-value config file");
    sub->add_option("--set", overrides, "override config entries (key=value)")->take_all();
    sub->add_option("--threads", threads, "worker thread cap (or RCRANK_THREADS)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic labeled workload");
  add_common(gen);
  gen->add_option("--out", out, "output dataset (JSON lines)")->required();
  gen->add_option("--seed", seed, "generator seed")->each([&](const std::string&) { seed_given = true; });

  CLI::App* pre = app.add_subcommand("pretrain", "self-supervised encoder pretraining");
  add_common(pre);
  pre->add_option("--data", data, "dataset file")->required();
  pre->add_option("--epochs", epochs_flag, "override pretraining epochs");
  pre->add_option("--out", out, "encoder checkpoint path")->required();
  pre->add_option("--seed", seed, "seed")->each([&](const std::string&) { seed_given = true; });

  CLI::App* tr = app.add_subcommand("train", "train the ranking model");
  add_common(tr);
  tr->add_option("--data", data, "dataset file")->required();
  tr->add_option("--pretrained", pretrained, "encoder checkpoint to initialize from");
  tr->add_option("--out", out, "model checkpoint path")->required();
  tr->add_option("--seed", seed, "seed")->each([&](const std::string&) { seed_given = true; });

  CLI::App* ev = app.add_subcommand("eval", "evaluate a model and write a metrics report");
  add_common(ev);
  ev->add_option("--model", model_path, "model checkpoint, or 'oracle' for the estimates=labels stub")->required();
  ev->add_option("--data", data, "dataset file")->required();
  ev->add_option("--report", report, "report path (JSON; CSV written alongside)")->required();
  ev->add_option("--specs", specs_path, "simulator specs sidecar for the end-to-end loop");

  CLI::App* di = app.add_subcommand("diagnose", "rank root causes for one query record");
  di->add_option("--model", model_path, "model checkpoint")->required();
  di->add_option("--query", query_path, "single-record JSON file")->required();
  di->add_option("--out", out, "also write the diagnosis JSON here");

  CLI::App* ab = app.add_subcommand("ablate", "train and compare model variants");
  add_common(ab);
  ab->add_option("--data", data, "dataset file")->required();
  ab->add_option("--variants", variants_arg, "comma list or 'default'");
  ab->add_option("--seeds", seeds_arg, "comma list of seeds");
  ab->add_option("--out", out, "output prefix")->required();

  CLI::App* sw = app.add_subcommand("sweep-lambda", "sensitivity sweep over the loss trade-off");
  add_common(sw);
  sw->add_option("--data", data, "dataset file")->required();
  sw->add_option("--values", values_arg, "comma list of lambda values");
  sw->add_option("--out", out, "report path (JSON)")->required();
  sw->add_option("--seed", seed, "seed")->each([&](const std::string&) { seed_given = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_run_config(config_path, overrides, seed, seed_given, threads);
    if (gen->parsed()) return cmd_gen_data(cfg, out, seed_given ? seed : cfg.train_config().seed);
    if (pre->parsed()) return cmd_pretrain(cfg, data, epochs_flag, out);
    if (tr->parsed()) return cmd_train(cfg, data, pretrained, out);
    if (ev->parsed()) return cmd_eval(cfg, model_path, data, report, specs_path);
    if (di->parsed()) return cmd_diagnose(model_path, query_path, out);
    if (ab->parsed()) return cmd_ablate(cfg, data, variants_arg, seeds_arg, out);
    if (sw->parsed()) return cmd_sweep_lambda(cfg, data, values_arg, out);
  } catch (const RcError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
