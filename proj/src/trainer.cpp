#include "rcrank/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rcrank/parallel.hpp"

namespace rcrank {

void TrainConfig::validate() const {
  if (lambda < 0.0) raise(ErrorCode::InvalidConfig, "lambda must be >= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0)) raise(ErrorCode::InvalidConfig, "epsilon must be in (0,1)");
  if (eta < 0.0) raise(ErrorCode::InvalidConfig, "eta must be >= 0");
  if (batch < 1 || epochs < 1) raise(ErrorCode::InvalidConfig, "batch and epochs must be >= 1");
  if (!(lr > 0.0)) raise(ErrorCode::InvalidConfig, "lr must be > 0");
}

json TrainConfig::to_json() const {
  json j;
  j["batch"] = batch;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["lambda"] = lambda;
  j["epsilon"] = epsilon;
  j["eta"] = eta;
  j["seed"] = seed;
  j["dropout"] = dropout;
  j["order_loss_independent_sort"] = order_loss_independent_sort;
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lambda = j.value("lambda", c.lambda);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.eta = j.value("eta", c.eta);
  c.seed = j.value("seed", c.seed);
  c.dropout = j.value("dropout", c.dropout);
  c.order_loss_independent_sort = j.value("order_loss_independent_sort", c.order_loss_independent_sort);
  return c;
}

namespace {

void check_lengths(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size())
    raise(ErrorCode::ShapeError,
          "impact lengths differ: " + std::to_string(y.size()) + " vs " + std::to_string(yhat.size()));
}

// Indices of v sorted by descending value; ties keep the lower index first.
std::vector<int> descending_order(std::span<const double> v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return v[static_cast<size_t>(a)] > v[static_cast<size_t>(b)]; });
  return idx;
}

}  // namespace

double loss_pred(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat);
  double sum = 0.0;
  for (size_t j = 0; j < y.size(); ++j) sum += (y[j] - yhat[j]) * (y[j] - yhat[j]);
  return sum;
}

double loss_valid(std::span<const double> y, std::span<const double> yhat, double eps, double eta) {
  check_lengths(y, yhat);
  double sum = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    double indicator = y[j] < eps ? 1.0 : -1.0;
    sum += std::max(0.0, indicator * (yhat[j] - eps) + eta);
  }
  return sum;
}

double loss_order(std::span<const double> y, std::span<const double> yhat, bool independent_sort) {
  check_lengths(y, yhat);
  if (y.size() < 2) return 0.0;
  std::vector<int> pi = descending_order(y);
  std::vector<double> z(y.size()), zhat(y.size());
  for (size_t j = 0; j < y.size(); ++j) z[j] = y[static_cast<size_t>(pi[j])];
  if (independent_sort) {
    std::vector<int> pe = descending_order(yhat);
    for (size_t j = 0; j < y.size(); ++j) zhat[j] = yhat[static_cast<size_t>(pe[j])];
  } else {
    // Estimates follow the ground-truth sort order, so inversions show up as
    // negative estimated gaps.
    for (size_t j = 0; j < y.size(); ++j) zhat[j] = yhat[static_cast<size_t>(pi[j])];
  }
  double sum = 0.0;
  for (size_t j = 0; j + 1 < y.size(); ++j)
    sum += std::max(0.0, (z[j] - z[j + 1]) - (zhat[j] - zhat[j + 1]));
  return sum;
}

double total_loss(std::span<const double> y, std::span<const double> yhat, const TrainConfig& cfg) {
  return loss_pred(y, yhat) +
         cfg.lambda * (loss_valid(y, yhat, cfg.epsilon, cfg.eta) + loss_order(y, yhat, cfg.order_loss_independent_sort));
}

LossNodes build_total_loss(Graph& g, Node* yhat, const std::vector<double>& y, const TrainConfig& cfg) {
  const int r = static_cast<int>(y.size());
  if (yhat->rows() != r || yhat->cols() != 1)
    raise(ErrorCode::ShapeError, "estimates must be [" + std::to_string(r) + "x1], got " + shape_str(yhat->shape()));
  LossNodes out;
  Node* truth = g.constant(Tensor({r, 1}, y));
  Node* diff = g.sub(yhat, truth);
  out.pred = g.sum(g.mul(diff, diff));

  Tensor indicator({r, 1});
  for (int j = 0; j < r; ++j) indicator.at(j, 0) = y[static_cast<size_t>(j)] < cfg.epsilon ? 1.0 : -1.0;
  Node* hinge = g.relu(g.add_scalar(g.mul(g.constant(std::move(indicator)), g.add_scalar(yhat, -cfg.epsilon)), cfg.eta));
  out.valid = g.sum(hinge);

  if (r >= 2) {
    std::vector<int> pi = descending_order(std::span<const double>(y));
    Tensor z_sorted({r, 1});
    for (int j = 0; j < r; ++j) z_sorted.at(j, 0) = y[static_cast<size_t>(pi[static_cast<size_t>(j)])];
    std::vector<int> est_order = pi;  // estimates follow the ground-truth permutation
    if (cfg.order_loss_independent_sort) est_order = descending_order(std::span<const double>(yhat->value().vec()));
    Node* z = g.constant(std::move(z_sorted));
    Node* zhat = g.rows(yhat, est_order);
    Node* z_gap = g.sub(g.slice(z, 0, 0, r - 1), g.slice(z, 0, 1, r - 1));
    Node* zhat_gap = g.sub(g.slice(zhat, 0, 0, r - 1), g.slice(zhat, 0, 1, r - 1));
    out.order = g.sum(g.relu(g.sub(z_gap, zhat_gap)));
  } else {
    out.order = g.scalar(0.0);
  }
  out.total = g.add(out.pred, g.scale(g.add(out.valid, out.order), cfg.lambda));
  return out;
}

TrainResult train(RCRankModel& model, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg) {
  cfg.validate();
  if (!model.initialized()) raise(ErrorCode::InvalidState, "model not initialized");
  std::vector<const QueryRecord*> train_records = labeled_records(train_ds);
  std::vector<const QueryRecord*> val_records = labeled_records(val_ds);
  if (train_records.empty()) raise(ErrorCode::InsufficientData, "no labeled training records");
  const int n = static_cast<int>(train_records.size());
  const int threads = resolve_threads(cfg.threads);
  constexpr int kChunks = 8;

  model.params().reset_optimizer_state();
  AdamConfig adam;
  adam.lr = cfg.lr;

  TrainResult result;
  std::vector<Tensor> best_values;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  ImpactMatrix val_truth = truth_matrix(val_records);

  auto clock_start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, 3300 + static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    double pred_sum = 0.0, valid_sum = 0.0, order_sum = 0.0;

    for (int start = 0; start < n; start += cfg.batch) {
      int count = std::min(cfg.batch, n - start);
      std::vector<GradAccum> chunk_grads;
      chunk_grads.reserve(kChunks);
      for (int c = 0; c < kChunks; ++c) chunk_grads.emplace_back(model.params());
      std::vector<std::array<double, 3>> losses(static_cast<size_t>(count));

      parallel_chunks(count, kChunks, threads, [&](int chunk, int begin, int end) {
        for (int b = begin; b < end; ++b) {
          int idx = order[static_cast<size_t>(start + b)];
          const QueryRecord& rec = *train_records[static_cast<size_t>(idx)];
          Rng rec_rng(cfg.seed ^ Rng::splitmix(static_cast<uint64_t>(epoch) * 7000003ULL + static_cast<uint64_t>(idx)),
                      33);
          Graph g(true, &rec_rng);
          Node* yhat = model.forward_estimates(g, rec);
          LossNodes loss = build_total_loss(g, yhat, *rec.impacts, cfg);
          losses[static_cast<size_t>(b)] = {loss.pred->value().item(), loss.valid->value().item(),
                                            loss.order->value().item()};
          g.backward(loss.total);
          g.accumulate_param_grads(chunk_grads[static_cast<size_t>(chunk)]);
        }
      });

      GradAccum total(model.params());
      for (auto& cg : chunk_grads) total.add(cg);
      total.scale(1.0 / static_cast<double>(count));
      adam_step(model.params(), total, adam);
      for (const auto& l : losses) {
        pred_sum += l[0];
        valid_sum += l[1];
        order_sum += l[2];
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.l_pred = pred_sum / static_cast<double>(n);
    log.l_valid = valid_sum / static_cast<double>(n);
    log.l_order = order_sum / static_cast<double>(n);
    if (!val_records.empty()) {
      ImpactMatrix val_est = predict_all(model, val_records, threads);
      log.val = compute_metrics(val_truth, val_est, cfg.epsilon);
    }
    result.log.push_back(log);

    if (result.best_epoch < 0 || log.val.top1_acc > result.best_val_top1) {
      result.best_epoch = epoch;
      result.best_val_top1 = log.val.top1_acc;
      best_values.clear();
      for (const Parameter* p : model.params().ordered()) best_values.push_back(p->value);
    }
  }
  auto clock_end = std::chrono::steady_clock::now();
  result.train_s_per_epoch = std::chrono::duration<double>(clock_end - clock_start).count() / cfg.epochs;

  // Restore the best-validation weights.
  if (!best_values.empty()) {
    size_t i = 0;
    for (Parameter* p : model.params().ordered()) p->value = best_values[i++];
  }
  return result;
}

void write_train_log_csv(const TrainResult& result, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  os << "epoch,l_pred,l_valid,l_order,val_v_acc,val_top1_acc,val_mse_mean,val_mc_acc,val_tau,val_top1_ir\n";
  for (const auto& row : result.log) {
    os << row.epoch << ',' << row.l_pred << ',' << row.l_valid << ',' << row.l_order << ',' << row.val.v_acc << ','
       << row.val.top1_acc << ',' << row.val.mse_mean << ',' << row.val.mc_acc << ',' << row.val.tau << ','
       << row.val.top1_ir << '\n';
  }
}

json RankedDiagnosis::to_json() const {
  json j;
  json list = json::array();
  for (const Entry& e : entries) {
    json je;
    je["rc"] = e.rc;
    je["name"] = e.name;
    je["impact"] = e.impact;
    list.push_back(je);
  }
  j["diagnosis"] = list;
  j["raw_estimates"] = raw;
  return j;
}

std::string RankedDiagnosis::to_table() const {
  std::ostringstream os;
  os << "rank  root cause            est. impact\n";
  if (entries.empty()) {
    os << "  (no root cause above the validity threshold)\n";
    return os.str();
  }
  for (size_t i = 0; i < entries.size(); ++i) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "%-5zu %-21s %8.4f\n", i + 1, entries[i].name.c_str(), entries[i].impact);
    os << buf;
  }
  return os.str();
}

RankedDiagnosis diagnose(const RCRankModel& model, const QueryRecord& rec, double eps) {
  RankedDiagnosis out;
  out.raw = model.predict(rec);
  for (int j : valid_sorted(out.raw, eps)) {
    RankedDiagnosis::Entry e;
    e.rc = j;
    e.name = model.catalog()[static_cast<size_t>(j)];
    e.impact = out.raw[static_cast<size_t>(j)];
    out.entries.push_back(std::move(e));
  }
  return out;
}

ImpactMatrix predict_all(const RCRankModel& model, const std::vector<const QueryRecord*>& records, int threads) {
  ImpactMatrix out(records.size());
  parallel_chunks(static_cast<int>(records.size()), 8, resolve_threads(threads), [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i) out[static_cast<size_t>(i)] = model.predict(*records[static_cast<size_t>(i)]);
  });
  return out;
}

std::vector<const QueryRecord*> labeled_records(const Dataset& ds) {
  std::vector<const QueryRecord*> out;
  for (const QueryRecord& rec : ds.records)
    if (rec.labeled()) out.push_back(&rec);
  return out;
}

ImpactMatrix truth_matrix(const std::vector<const QueryRecord*>& records) {
  ImpactMatrix out;
  out.reserve(records.size());
  for (const QueryRecord* rec : records) out.push_back(*rec->impacts);
  return out;
}

}  // namespace rcrank
