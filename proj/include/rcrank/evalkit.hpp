#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rcrank/domain.hpp"

namespace rcrank {

// Impact matrices are n_queries x r.
using ImpactMatrix = std::vector<std::vector<double>>;

struct MetricsReport {
  double v_acc = 0.0;
  double top1_acc = 0.0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  double mc_acc = 0.0;
  double tau = 0.0;
  double top1_ir = 0.0;
  int n_queries = 0;
  int top1_skipped = 0;    // tied ground-truth argmax
  int tau_skipped = 0;     // zero denominator factor
  int no_valid_truth = 0;  // excluded from Top1-ACC / MC-ACC denominators
  double train_s_per_epoch = 0.0;
  double infer_s_per_query = 0.0;

  json to_json() const;
  static MetricsReport from_json(const json& j);
};

// Fraction of (query, cause) cells where estimated and true validity agree.
double v_acc(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps);

// Fraction of queries whose estimated argmax matches the true argmax. Queries
// without a valid true cause are excluded; tied true argmaxes are skipped.
double top1_acc(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps, int* skipped = nullptr,
                int* excluded = nullptr);

// Per-query MSE over the r causes, then mean and population std over queries
// (per-cell aggregation behind the flag).
std::pair<double, double> mse_with_std(const ImpactMatrix& truth, const ImpactMatrix& estimates,
                                       bool per_cell = false);

// Fraction of queries whose valid list (filtered by eps, sorted by impact)
// matches the ground truth in membership and order.
double mc_acc(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps, int* excluded = nullptr);

// Kendall's tau-b per query, averaged; zero-denominator queries are skipped.
double kendall_tau(const ImpactMatrix& truth, const ImpactMatrix& estimates, int* skipped = nullptr);

// Mean over queries of the true impact of the estimated top-1 cause.
double top1_ir(const ImpactMatrix& truth, const ImpactMatrix& estimates);

MetricsReport compute_metrics(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps);

void write_metrics_json(const MetricsReport& report, const std::string& path);
void write_metrics_csv(const MetricsReport& report, const std::string& path);

// Valid causes sorted by descending impact, ties broken by lower index.
std::vector<int> valid_sorted(const std::vector<double>& impacts, double eps);
int argmax_index(const std::vector<double>& values);  // ties -> lowest index

}  // namespace rcrank
