#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rcrank/pretrain.hpp"
#include "rcrank/synthgen.hpp"
#include "rcrank/trainer.hpp"

namespace rcrank {

struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  PretrainConfig pretrain;
  bool use_pretraining = true;
};

// Named experiment variants: the full model, the ablations, the
// single-modality baselines, and the main-modality swaps.
enum class Variant {
  Full,
  Concat,
  NoGate,
  MseOnly,
  NoPretrain,
  OnlySql,
  OnlyPlan,
  OnlyLog,
  OnlyKpi,
  PlanKpiConcat,
  MainSql,
  MainPlan,
  MainLog,
  MainKpi,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);  // InvalidConfig on unknown
std::vector<Variant> default_variants();
void apply_variant(Variant v, PipelineConfig& cfg);

struct TrainedPipeline {
  RCRankModel model;
  TrainResult train_result;
  PretrainResult pretrain_result;
};

// Pretrain (optionally) + train one model. `shared_pretrained` supplies
// already-pretrained encoder weights to avoid repeating identical pretraining
// across variants of one seed.
TrainedPipeline run_pipeline(const Dataset& train_ds, const Dataset& val_ds, const PipelineConfig& cfg,
                             const RCRankModel* shared_pretrained = nullptr);

MetricsReport evaluate_model(const RCRankModel& model, const Dataset& test_ds, double eps, int threads = 0);

struct VariantRow {
  std::string variant;
  uint64_t seed = 0;
  MetricsReport report;
};

struct VariantTable {
  std::vector<VariantRow> rows;

  struct Aggregate {
    std::string variant;
    int n_seeds = 0;
    MetricsReport mean;
    MetricsReport stddev;
  };
  std::vector<Aggregate> aggregates() const;
  json to_json() const;
  std::string to_csv() const;
  std::string to_text() const;  // aligned mean +/- std table
};

// Trains and evaluates every requested variant for every seed on the
// dataset's tagged splits.
VariantTable run_variants(const Dataset& dataset, const std::vector<Variant>& variants,
                          const std::vector<uint64_t>& seeds, const PipelineConfig& base);

struct LambdaRow {
  double lambda = 0.0;
  MetricsReport report;
};
std::vector<LambdaRow> lambda_sweep(const Dataset& dataset, const std::vector<double>& values, uint64_t seed,
                                    const PipelineConfig& base);
json lambda_rows_to_json(const std::vector<LambdaRow>& rows);

struct EndToEndResult {
  double original_total_s = 0.0;
  double revised_total_s = 0.0;
  double improvement_pct = 0.0;
  int n_queries = 0;
};

// Revises each test slow query by the estimator's top-1 cause and re-runs the
// simulator noiselessly (the Table-7-style loop).
EndToEndResult end_to_end_improvement(const std::function<std::vector<double>(const QueryRecord&)>& estimator,
                                      const std::vector<const QueryRecord*>& test_records, const SpecsFile& specs);

// Minimal grouped bar chart of one metric across variants.
void write_variant_svg(const VariantTable& table, const std::string& metric, const std::string& path);

}  // namespace rcrank
