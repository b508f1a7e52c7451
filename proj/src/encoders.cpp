#include "rcrank/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace rcrank {

namespace {

constexpr int kPlanMaskRow = kOpKindCount;  // extra row in the op embedding table

Node* linear(Graph& g, Node* x, Parameter& w, Parameter* b) {
  Node* y = g.matmul(x, g.param(w));
  if (b) y = g.add(y, g.param(*b));
  return y;
}

}  // namespace

Tensor sinusoidal_positions(int n, int d) {
  Tensor pos({n, d});
  for (int p = 0; p < n; ++p) {
    for (int i = 0; i < d; ++i) {
      double rate = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(d));
      pos.at(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return pos;
}

TransformerLayer::TransformerLayer(ParamStore& s, const std::string& pfx, int d_, int heads_, double drop,
                                   uint64_t seed)
    : store(&s), prefix(pfx), d(d_), heads(heads_), dropout(drop) {
  if (d % heads != 0) raise(ErrorCode::InvalidConfig, "d must be divisible by head count");
  for (const char* w : {"wq", "wk", "wv", "wo"}) s.create(prefix + "/" + w, {d, d}, Init::XavierUniform, seed);
  s.create(prefix + "/ffn_w1", {d, 4 * d}, Init::XavierUniform, seed);
  s.create(prefix + "/ffn_b1", {1, 4 * d}, Init::Zeros, seed);
  s.create(prefix + "/ffn_w2", {4 * d, d}, Init::XavierUniform, seed);
  s.create(prefix + "/ffn_b2", {1, d}, Init::Zeros, seed);
  s.create(prefix + "/ln1_g", {1, d}, Init::Ones, seed);
  s.create(prefix + "/ln1_b", {1, d}, Init::Zeros, seed);
  s.create(prefix + "/ln2_g", {1, d}, Init::Ones, seed);
  s.create(prefix + "/ln2_b", {1, d}, Init::Zeros, seed);
}

Node* TransformerLayer::forward(Graph& g, Node* x, Node* attn_bias) const {
  const int dh = d / heads;
  Node* q = g.matmul(x, g.param(store->at(prefix + "/wq")));
  Node* k = g.matmul(x, g.param(store->at(prefix + "/wk")));
  Node* v = g.matmul(x, g.param(store->at(prefix + "/wv")));
  std::vector<Node*> ctx;
  for (int h = 0; h < heads; ++h) {
    Node* qh = g.slice(q, 1, h * dh, dh);
    Node* kh = g.slice(k, 1, h * dh, dh);
    Node* vh = g.slice(v, 1, h * dh, dh);
    Node* scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (attn_bias) scores = g.add(scores, attn_bias);
    ctx.push_back(g.matmul(g.softmax(scores, 1), vh));
  }
  Node* attn = g.matmul(g.concat(ctx, 1), g.param(store->at(prefix + "/wo")));
  Node* x1 = g.layer_norm(g.add(x, g.dropout(attn, dropout)), g.param(store->at(prefix + "/ln1_g")),
                          g.param(store->at(prefix + "/ln1_b")));
  Node* hid = g.relu(g.add(g.matmul(x1, g.param(store->at(prefix + "/ffn_w1"))), g.param(store->at(prefix + "/ffn_b1"))));
  Node* ffn = g.add(g.matmul(hid, g.param(store->at(prefix + "/ffn_w2"))), g.param(store->at(prefix + "/ffn_b2")));
  return g.layer_norm(g.add(x1, g.dropout(ffn, dropout)), g.param(store->at(prefix + "/ln2_g")),
                      g.param(store->at(prefix + "/ln2_b")));
}

// ---------------------------------------------------------------------------
// SQL
// ---------------------------------------------------------------------------

SqlEncoder::SqlEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed) : store_(&store), cfg_(cfg) {
  store.create("enc_s/tok_emb", {cfg.vocab_size, cfg.d}, Init::Normal02, seed);
  for (int l = 0; l < cfg.sql_layers; ++l)
    layers_.emplace_back(store, "enc_s/l" + std::to_string(l), cfg.d, cfg.sql_heads, cfg.dropout, seed);
}

ModalEmbedding SqlEncoder::forward(Graph& g, const TokenSeq& tokens, const EncodeOptions& opts) const {
  if (tokens.tokens.empty()) raise(ErrorCode::InvalidInput, "empty token sequence");
  int n = static_cast<int>(std::min<size_t>(tokens.tokens.size(), static_cast<size_t>(cfg_.max_sql_len)));
  std::vector<int> ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = tokens.tokens[static_cast<size_t>(i)].id;
  if (opts.masked_sql)
    for (int p : *opts.masked_sql)
      if (p >= 0 && p < n) ids[static_cast<size_t>(p)] = Vocabulary::kMask;
  Node* x = g.add(g.rows(g.param(store_->at("enc_s/tok_emb")), ids), g.constant(sinusoidal_positions(n, cfg_.d)));
  for (const auto& layer : layers_) x = layer.forward(g, x, nullptr);
  ModalEmbedding out;
  out.seq = x;
  out.pooled = g.mean_rows(x);
  out.truncated = tokens.tokens.size() > static_cast<size_t>(cfg_.max_sql_len) || tokens.truncated;
  return out;
}

// ---------------------------------------------------------------------------
// Plan
// ---------------------------------------------------------------------------

PlanEncoder::PlanEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed) : store_(&store), cfg_(cfg) {
  store.create("enc_p/op_emb", {kOpKindCount + 1, cfg.d}, Init::Normal02, seed);
  store.create("enc_p/num_w", {2, cfg.d}, Init::XavierUniform, seed);
  if (cfg.plan_struct_bias)
    store.create("enc_p/bias_table", {cfg.plan_dist_buckets, cfg.plan_heads}, Init::Zeros, seed);
  for (int l = 0; l < cfg.plan_layers; ++l)
    layers_.emplace_back(store, "enc_p/l" + std::to_string(l), cfg.d, cfg.plan_heads, cfg.dropout, seed);
}

ModalEmbedding PlanEncoder::forward(Graph& g, const PlanDag& plan, const EncodeOptions& opts) const {
  const int n = plan.node_count();
  std::vector<int> kinds(static_cast<size_t>(n));
  Tensor numeric({n, 2});
  for (int i = 0; i < n; ++i) {
    kinds[static_cast<size_t>(i)] = static_cast<int>(plan.node(i).op);
    numeric.at(i, 0) = std::log1p(plan.node(i).est_rows);
    numeric.at(i, 1) = std::log1p(plan.node(i).est_cost * 1000.0);
  }
  if (opts.masked_plan) {
    for (int p : *opts.masked_plan) {
      if (p < 0 || p >= n) continue;
      kinds[static_cast<size_t>(p)] = kPlanMaskRow;
      numeric.at(p, 0) = 0.0;
      numeric.at(p, 1) = 0.0;
    }
  }
  Node* x = g.add(g.rows(g.param(store_->at("enc_p/op_emb")), kinds),
                  g.matmul(g.constant(std::move(numeric)), g.param(store_->at("enc_p/num_w"))));

  // Additive attention bias indexed by bucketed tree distance, one bucket
  // column per head; shared across layers.
  std::vector<Node*> head_bias(static_cast<size_t>(cfg_.plan_heads), nullptr);
  bool biased = cfg_.plan_struct_bias && n > 1;
  if (biased) {
    auto dist = plan.undirected_distances(cfg_.plan_dist_buckets - 1);
    std::vector<int> flat(static_cast<size_t>(n) * n);
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v) flat[static_cast<size_t>(u) * n + v] = dist[static_cast<size_t>(u)][static_cast<size_t>(v)];
    Node* gathered = g.rows(g.param(store_->at("enc_p/bias_table")), flat);  // {n*n, heads}
    for (int h = 0; h < cfg_.plan_heads; ++h)
      head_bias[static_cast<size_t>(h)] = g.reshape(g.slice(gathered, 1, h, 1), {n, n});
  }
  for (const auto& layer : layers_) {
    // Per-head bias differs, so expand the layer manually when biased.
    if (!biased) {
      x = layer.forward(g, x, nullptr);
      continue;
    }
    const int dh = cfg_.d / cfg_.plan_heads;
    const std::string& pfx = layer.prefix;
    Node* q = g.matmul(x, g.param(store_->at(pfx + "/wq")));
    Node* k = g.matmul(x, g.param(store_->at(pfx + "/wk")));
    Node* v = g.matmul(x, g.param(store_->at(pfx + "/wv")));
    std::vector<Node*> ctx;
    for (int h = 0; h < cfg_.plan_heads; ++h) {
      Node* qh = g.slice(q, 1, h * dh, dh);
      Node* kh = g.slice(k, 1, h * dh, dh);
      Node* vh = g.slice(v, 1, h * dh, dh);
      Node* scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
      scores = g.add(scores, head_bias[static_cast<size_t>(h)]);
      ctx.push_back(g.matmul(g.softmax(scores, 1), vh));
    }
    Node* attn = g.matmul(g.concat(ctx, 1), g.param(store_->at(pfx + "/wo")));
    Node* x1 = g.layer_norm(g.add(x, g.dropout(attn, cfg_.dropout)), g.param(store_->at(pfx + "/ln1_g")),
                            g.param(store_->at(pfx + "/ln1_b")));
    Node* hid =
        g.relu(g.add(g.matmul(x1, g.param(store_->at(pfx + "/ffn_w1"))), g.param(store_->at(pfx + "/ffn_b1"))));
    Node* ffn = g.add(g.matmul(hid, g.param(store_->at(pfx + "/ffn_w2"))), g.param(store_->at(pfx + "/ffn_b2")));
    x = g.layer_norm(g.add(x1, g.dropout(ffn, cfg_.dropout)), g.param(store_->at(pfx + "/ln2_g")),
                     g.param(store_->at(pfx + "/ln2_b")));
  }
  ModalEmbedding out;
  out.seq = x;
  out.pooled = g.rows(x, {plan.root()});
  return out;
}

// ---------------------------------------------------------------------------
// Log
// ---------------------------------------------------------------------------

LogEncoder::LogEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed) : store_(&store), cfg_(cfg) {
  store.create("enc_l/w1", {kLogFieldCount, cfg.log_h1}, Init::XavierUniform, seed);
  store.create("enc_l/b1", {1, cfg.log_h1}, Init::Zeros, seed);
  store.create("enc_l/w2", {cfg.log_h1, cfg.log_h2}, Init::XavierUniform, seed);
  store.create("enc_l/b2", {1, cfg.log_h2}, Init::Zeros, seed);
  store.create("enc_l/w3", {cfg.log_h2, cfg.d}, Init::XavierUniform, seed);
  store.create("enc_l/b3", {1, cfg.d}, Init::Zeros, seed);
}

ModalEmbedding LogEncoder::forward(Graph& g, const LogVector& log, const EncodeOptions& opts) const {
  Tensor in({1, kLogFieldCount});
  for (int i = 0; i < kLogFieldCount; ++i) in.at(0, i) = log[i];
  if (opts.masked_log)
    for (int f : *opts.masked_log)
      if (f >= 0 && f < kLogFieldCount) in.at(0, f) = 0.0;  // mask sentinel
  Node* x = g.constant(std::move(in));
  x = g.relu(linear(g, x, store_->at("enc_l/w1"), &store_->at("enc_l/b1")));
  x = g.relu(linear(g, x, store_->at("enc_l/w2"), &store_->at("enc_l/b2")));
  x = linear(g, x, store_->at("enc_l/w3"), &store_->at("enc_l/b3"));
  ModalEmbedding out;
  out.seq = x;
  out.pooled = x;
  return out;
}

// ---------------------------------------------------------------------------
// KPIs
// ---------------------------------------------------------------------------

KpiEncoder::KpiEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed) : store_(&store), cfg_(cfg) {
  store.create("enc_i/conv1_w", {cfg.kpi_c1, 1, 3, 3}, Init::XavierUniform, seed);
  store.create("enc_i/conv1_b", {cfg.kpi_c1}, Init::Zeros, seed);
  store.create("enc_i/conv2_w", {cfg.kpi_c2, cfg.kpi_c1, 3, 3}, Init::XavierUniform, seed);
  store.create("enc_i/conv2_b", {cfg.kpi_c2}, Init::Zeros, seed);
  store.create("enc_i/proj_w", {cfg.kpi_c2 * cfg.kpi_q * cfg.kpi_t, cfg.d}, Init::XavierUniform, seed);
  store.create("enc_i/proj_b", {1, cfg.d}, Init::Zeros, seed);
}

ModalEmbedding KpiEncoder::forward(Graph& g, const KpiMatrix& kpis, const EncodeOptions&) const {
  if (kpis.q != cfg_.kpi_q || kpis.t != cfg_.kpi_t)
    raise(ErrorCode::ShapeError, "KPI matrix is " + std::to_string(kpis.q) + "x" + std::to_string(kpis.t) +
                                     ", model expects " + std::to_string(cfg_.kpi_q) + "x" + std::to_string(cfg_.kpi_t));
  Node* x = g.constant(Tensor({1, kpis.q, kpis.t}, kpis.values));
  x = g.relu(g.conv2d(x, g.param(store_->at("enc_i/conv1_w")), g.param(store_->at("enc_i/conv1_b")), 1, 1, 1, 1));
  x = g.relu(g.conv2d(x, g.param(store_->at("enc_i/conv2_w")), g.param(store_->at("enc_i/conv2_b")), 1, 1, 1, 1));
  Node* flat = g.reshape(x, {1, cfg_.kpi_c2 * cfg_.kpi_q * cfg_.kpi_t});
  Node* pooled = g.add(g.matmul(flat, g.param(store_->at("enc_i/proj_w"))), g.param(store_->at("enc_i/proj_b")));
  ModalEmbedding out;
  out.seq = pooled;
  out.pooled = pooled;
  return out;
}

KpiDecoder::KpiDecoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed) : store_(&store), cfg_(cfg) {
  store.create("dec_i/proj_w", {cfg.d, cfg.kpi_c2 * cfg.kpi_q * cfg.kpi_t}, Init::XavierUniform, seed);
  store.create("dec_i/proj_b", {1, cfg.kpi_c2 * cfg.kpi_q * cfg.kpi_t}, Init::Zeros, seed);
  store.create("dec_i/conv1_w", {cfg.kpi_c1, cfg.kpi_c2, 3, 3}, Init::XavierUniform, seed);
  store.create("dec_i/conv1_b", {cfg.kpi_c1}, Init::Zeros, seed);
  store.create("dec_i/conv2_w", {1, cfg.kpi_c1, 3, 3}, Init::XavierUniform, seed);
  store.create("dec_i/conv2_b", {1}, Init::Zeros, seed);
}

Node* KpiDecoder::forward(Graph& g, Node* pooled) const {
  Node* x = g.relu(g.add(g.matmul(pooled, g.param(store_->at("dec_i/proj_w"))), g.param(store_->at("dec_i/proj_b"))));
  x = g.reshape(x, {cfg_.kpi_c2, cfg_.kpi_q, cfg_.kpi_t});
  x = g.relu(g.conv2d(x, g.param(store_->at("dec_i/conv1_w")), g.param(store_->at("dec_i/conv1_b")), 1, 1, 1, 1));
  x = g.conv2d(x, g.param(store_->at("dec_i/conv2_w")), g.param(store_->at("dec_i/conv2_b")), 1, 1, 1, 1);
  return g.reshape(x, {cfg_.kpi_q, cfg_.kpi_t});
}

}  // namespace rcrank
