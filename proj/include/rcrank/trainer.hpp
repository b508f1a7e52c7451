#pragma once

#include <span>
#include <string>
#include <vector>

#include "rcrank/evalkit.hpp"
#include "rcrank/model.hpp"

namespace rcrank {

struct TrainConfig {
  int batch = 64;
  int epochs = 50;
  double lr = 3e-4;
  double lambda = 7.0;
  double epsilon = 0.10;
  double eta = 0.02;  // hinge margin
  uint64_t seed = 0;
  double dropout = 0.1;
  int threads = 0;
  bool order_loss_independent_sort = false;

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

// Reference losses for one query (sum over causes); the training loop uses
// the graph builder below and batch-averages.
double loss_pred(std::span<const double> y, std::span<const double> yhat);
double loss_valid(std::span<const double> y, std::span<const double> yhat, double eps, double eta);
double loss_order(std::span<const double> y, std::span<const double> yhat, bool independent_sort = false);
double total_loss(std::span<const double> y, std::span<const double> yhat, const TrainConfig& cfg);

struct LossNodes {
  Node* pred = nullptr;
  Node* valid = nullptr;
  Node* order = nullptr;
  Node* total = nullptr;
};
LossNodes build_total_loss(Graph& g, Node* yhat, const std::vector<double>& y, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double l_pred = 0.0, l_valid = 0.0, l_order = 0.0;
  MetricsReport val;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_top1 = 0.0;
  double train_s_per_epoch = 0.0;
};

// Adam training over the labeled records of `train`; keeps the weights of the
// best validation Top1-ACC epoch. Deterministic under cfg.seed and
// independent of the thread count.
TrainResult train(RCRankModel& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg);

void write_train_log_csv(const TrainResult& result, const std::string& path);

struct RankedDiagnosis {
  struct Entry {
    int rc = -1;
    std::string name;
    double impact = 0.0;
  };
  std::vector<Entry> entries;  // descending impact, all >= eps
  std::vector<double> raw;     // full estimate vector

  json to_json() const;
  std::string to_table() const;
};

RankedDiagnosis diagnose(const RCRankModel& model, const QueryRecord& rec, double eps);

// Estimates for a whole record list (eval mode, parallel chunks).
ImpactMatrix predict_all(const RCRankModel& model, const std::vector<const QueryRecord*>& records, int threads);
std::vector<const QueryRecord*> labeled_records(const Dataset& ds);
ImpactMatrix truth_matrix(const std::vector<const QueryRecord*>& records);

}  // namespace rcrank
