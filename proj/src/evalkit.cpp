#include "rcrank/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace rcrank {

namespace {

void check_shapes(const ImpactMatrix& truth, const ImpactMatrix& estimates) {
  if (truth.size() != estimates.size())
    raise(ErrorCode::ShapeError,
          "query counts differ: " + std::to_string(truth.size()) + " vs " + std::to_string(estimates.size()));
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != estimates[i].size())
      raise(ErrorCode::ShapeError, "impact vector lengths differ at query " + std::to_string(i));
  }
}

}  // namespace

int argmax_index(const std::vector<double>& values) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(values.size()); ++j)
    if (values[static_cast<size_t>(j)] > values[static_cast<size_t>(best)]) best = j;
  return best;
}

std::vector<int> valid_sorted(const std::vector<double>& impacts, double eps) {
  std::vector<int> idx;
  for (int j = 0; j < static_cast<int>(impacts.size()); ++j)
    if (impacts[static_cast<size_t>(j)] >= eps) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return impacts[static_cast<size_t>(a)] > impacts[static_cast<size_t>(b)];
  });
  return idx;
}

double v_acc(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps) {
  check_shapes(truth, estimates);
  int64_t agree = 0, cells = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    for (size_t j = 0; j < truth[i].size(); ++j) {
      bool tv = truth[i][j] >= eps;
      bool ev = estimates[i][j] >= eps;
      agree += tv == ev ? 1 : 0;
      ++cells;
    }
  }
  return cells == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(cells);
}

double top1_acc(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps, int* skipped, int* excluded) {
  check_shapes(truth, estimates);
  int correct = 0, counted = 0, skip = 0, excl = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    int t_arg = argmax_index(truth[i]);
    if (truth[i][static_cast<size_t>(t_arg)] < eps) {
      ++excl;
      continue;
    }
    bool tie = false;
    for (size_t j = 0; j < truth[i].size(); ++j)
      if (static_cast<int>(j) != t_arg && truth[i][j] == truth[i][static_cast<size_t>(t_arg)]) tie = true;
    if (tie) {
      ++skip;
      continue;
    }
    ++counted;
    if (argmax_index(estimates[i]) == t_arg) ++correct;
  }
  if (skipped) *skipped = skip;
  if (excluded) *excluded = excl;
  return counted == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(counted);
}

std::pair<double, double> mse_with_std(const ImpactMatrix& truth, const ImpactMatrix& estimates, bool per_cell) {
  check_shapes(truth, estimates);
  std::vector<double> errors;
  for (size_t i = 0; i < truth.size(); ++i) {
    double sum = 0.0;
    for (size_t j = 0; j < truth[i].size(); ++j) {
      double d = truth[i][j] - estimates[i][j];
      if (per_cell)
        errors.push_back(d * d);
      else
        sum += d * d;
    }
    if (!per_cell && !truth[i].empty()) errors.push_back(sum / static_cast<double>(truth[i].size()));
  }
  if (errors.empty()) return {0.0, 0.0};
  double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  double var = 0.0;
  for (double e : errors) var += (e - mean) * (e - mean);
  var /= static_cast<double>(errors.size());
  return {mean, std::sqrt(var)};
}

double mc_acc(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps, int* excluded) {
  check_shapes(truth, estimates);
  int consistent = 0, counted = 0, excl = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    std::vector<int> t_list = valid_sorted(truth[i], eps);
    if (t_list.empty()) {
      ++excl;
      continue;
    }
    ++counted;
    if (valid_sorted(estimates[i], eps) == t_list) ++consistent;
  }
  if (excluded) *excluded = excl;
  return counted == 0 ? 0.0 : static_cast<double>(consistent) / static_cast<double>(counted);
}

double kendall_tau(const ImpactMatrix& truth, const ImpactMatrix& estimates, int* skipped) {
  check_shapes(truth, estimates);
  double tau_sum = 0.0;
  int counted = 0, skip = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const auto& y = truth[i];
    const auto& e = estimates[i];
    int64_t nc = 0, nd = 0, ties_est = 0, ties_truth = 0;
    int n = static_cast<int>(y.size());
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        double dy = y[static_cast<size_t>(a)] - y[static_cast<size_t>(b)];
        double de = e[static_cast<size_t>(a)] - e[static_cast<size_t>(b)];
        if (dy == 0.0) ++ties_truth;
        if (de == 0.0) ++ties_est;
        if (dy == 0.0 || de == 0.0) continue;
        if ((dy > 0.0) == (de > 0.0))
          ++nc;
        else
          ++nd;
      }
    }
    int64_t n0 = static_cast<int64_t>(n) * (n - 1) / 2;
    double fa = static_cast<double>(n0 - ties_est);
    double fb = static_cast<double>(n0 - ties_truth);
    if (fa <= 0.0 || fb <= 0.0) {
      ++skip;
      continue;
    }
    tau_sum += static_cast<double>(nc - nd) / std::sqrt(fa * fb);
    ++counted;
  }
  if (skipped) *skipped = skip;
  return counted == 0 ? 0.0 : tau_sum / static_cast<double>(counted);
}

double top1_ir(const ImpactMatrix& truth, const ImpactMatrix& estimates) {
  check_shapes(truth, estimates);
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) sum += truth[i][static_cast<size_t>(argmax_index(estimates[i]))];
  return sum / static_cast<double>(truth.size());
}

MetricsReport compute_metrics(const ImpactMatrix& truth, const ImpactMatrix& estimates, double eps) {
  MetricsReport r;
  r.n_queries = static_cast<int>(truth.size());
  r.v_acc = v_acc(truth, estimates, eps);
  r.top1_acc = top1_acc(truth, estimates, eps, &r.top1_skipped, &r.no_valid_truth);
  std::tie(r.mse_mean, r.mse_std) = mse_with_std(truth, estimates);
  r.mc_acc = mc_acc(truth, estimates, eps);
  r.tau = kendall_tau(truth, estimates, &r.tau_skipped);
  r.top1_ir = top1_ir(truth, estimates);
  return r;
}

json MetricsReport::to_json() const {
  json j;
  j["v_acc"] = v_acc;
  j["top1_acc"] = top1_acc;
  j["mse_mean"] = mse_mean;
  j["mse_std"] = mse_std;
  j["mc_acc"] = mc_acc;
  j["tau"] = tau;
  j["top1_ir"] = top1_ir;
  j["n_queries"] = n_queries;
  j["top1_skipped"] = top1_skipped;
  j["tau_skipped"] = tau_skipped;
  j["no_valid_truth"] = no_valid_truth;
  j["train_s_per_epoch"] = train_s_per_epoch;
  j["infer_s_per_query"] = infer_s_per_query;
  return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.v_acc = j.at("v_acc").get<double>();
  r.top1_acc = j.at("top1_acc").get<double>();
  r.mse_mean = j.at("mse_mean").get<double>();
  r.mse_std = j.at("mse_std").get<double>();
  r.mc_acc = j.at("mc_acc").get<double>();
  r.tau = j.at("tau").get<double>();
  r.top1_ir = j.at("top1_ir").get<double>();
  r.n_queries = j.at("n_queries").get<int>();
  r.top1_skipped = j.value("top1_skipped", 0);
  r.tau_skipped = j.value("tau_skipped", 0);
  r.no_valid_truth = j.value("no_valid_truth", 0);
  r.train_s_per_epoch = j.value("train_s_per_epoch", 0.0);
  r.infer_s_per_query = j.value("infer_s_per_query", 0.0);
  return r;
}

void write_metrics_json(const MetricsReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  os << report.to_json().dump(2) << '\n';
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  os << "v_acc,top1_acc,mse_mean,mse_std,mc_acc,tau,top1_ir,n_queries,train_s_per_epoch,infer_s_per_query\n";
  os << report.v_acc << ',' << report.top1_acc << ',' << report.mse_mean << ',' << report.mse_std << ','
     << report.mc_acc << ',' << report.tau << ',' << report.top1_ir << ',' << report.n_queries << ','
     << report.train_s_per_epoch << ',' << report.infer_s_per_query << '\n';
}

}  // namespace rcrank
