#include "rcrank/fusion.hpp"

#include <cmath>

namespace rcrank {

namespace {

const char* kModalityNames[kModalityCount] = {"sql", "plan", "log", "kpi"};

}  // namespace

const char* modality_name(Modality m) { return kModalityNames[static_cast<int>(m)]; }

Modality modality_from_name(const std::string& name) {
  for (int i = 0; i < kModalityCount; ++i)
    if (name == kModalityNames[i]) return static_cast<Modality>(i);
  raise(ErrorCode::InvalidConfig, "unknown modality: " + name);
}

Node* cross_attention(Graph& g, Node* main_seq, Node* other_seq, Node* wq, Node* wk, Node* wv) {
  if (main_seq->cols() != wq->rows() || other_seq->cols() != wk->rows())
    raise(ErrorCode::ShapeError, "cross_attention: embedding widths disagree");
  int d = wq->cols();
  Node* q = g.matmul(main_seq, wq);
  Node* k = g.matmul(other_seq, wk);
  Node* v = g.matmul(other_seq, wv);
  Node* scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  return g.matmul(g.softmax(scores, 1), v);
}

CmtStack::CmtStack(ParamStore& store, const std::string& prefix, const FusionConfig& cfg, uint64_t seed)
    : store_(&store), prefix_(prefix), cfg_(cfg) {
  for (int b = 0; b < cfg.blocks; ++b) {
    std::string p = prefix + "/b" + std::to_string(b);
    store.create(p + "/wq", {cfg.d, cfg.d}, Init::XavierUniform, seed);
    for (int m = 0; m < kModalityCount; ++m) {
      store.create(p + "/wk_" + kModalityNames[m], {cfg.d, cfg.d}, Init::XavierUniform, seed);
      store.create(p + "/wv_" + kModalityNames[m], {cfg.d, cfg.d}, Init::XavierUniform, seed);
    }
    store.create(p + "/ffn_w1", {4 * cfg.d, cfg.d}, Init::XavierUniform, seed);
    store.create(p + "/ffn_b1", {1, cfg.d}, Init::Zeros, seed);
    store.create(p + "/ffn_w2", {cfg.d, cfg.d}, Init::XavierUniform, seed);
    store.create(p + "/ffn_b2", {1, cfg.d}, Init::Zeros, seed);
    store.create(p + "/ln_g", {1, cfg.d}, Init::Ones, seed);
    store.create(p + "/ln_b", {1, cfg.d}, Init::Zeros, seed);
  }
}

Node* CmtStack::forward(Graph& g, const std::array<Node*, kModalityCount>& seqs, bool training) const {
  (void)training;
  int main = static_cast<int>(cfg_.main_modality);
  Node* x = seqs[static_cast<size_t>(main)];
  for (int b = 0; b < cfg_.blocks; ++b) {
    std::string p = prefix_ + "/b" + std::to_string(b);
    Node* wq = g.param(store_->at(p + "/wq"));
    std::vector<Node*> features;
    for (int m = 0; m < kModalityCount; ++m) {
      Node* source = m == main ? x : seqs[static_cast<size_t>(m)];  // self-attention for the main slot
      Node* wk = g.param(store_->at(p + "/wk_" + kModalityNames[m]));
      Node* wv = g.param(store_->at(p + "/wv_" + kModalityNames[m]));
      features.push_back(cross_attention(g, x, source, wq, wk, wv));
    }
    Node* cat = g.concat(features, 1);  // {n_main, 4d}
    Node* hid = g.relu(g.add(g.matmul(cat, g.param(store_->at(p + "/ffn_w1"))), g.param(store_->at(p + "/ffn_b1"))));
    Node* ffn = g.add(g.matmul(hid, g.param(store_->at(p + "/ffn_w2"))), g.param(store_->at(p + "/ffn_b2")));
    x = g.layer_norm(g.add(x, g.dropout(ffn, cfg_.dropout)), g.param(store_->at(p + "/ln_g")),
                     g.param(store_->at(p + "/ln_b")));
  }
  return g.mean_rows(x);
}

FusionModule::FusionModule(ParamStore& store, const FusionConfig& cfg, uint64_t seed)
    : store_(&store), cfg_(cfg), common_(store, "cmt_common", cfg, seed) {
  if (cfg.share_adaptive) {
    adaptive_.emplace_back(store, "cmt_adaptive", cfg, seed);
  } else {
    for (int j = 0; j < cfg.r; ++j)
      adaptive_.emplace_back(store, "cmt_adaptive/rc" + std::to_string(j), cfg, seed);
  }
  if (cfg.gates_enabled) {
    for (int j = 0; j < cfg.r; ++j) {
      for (int m = 0; m < kModalityCount; ++m) {
        std::string p = "gates/rc" + std::to_string(j) + "/" + kModalityNames[m];
        store.create(p + "/w", {cfg.d, cfg.d}, Init::XavierUniform, seed);
        store.create(p + "/b", {1, cfg.d}, Init::Zeros, seed);
      }
    }
  }
}

Node* FusionModule::gate(Graph& g, int rc, Modality m, Node* seq) const {
  std::string p = "gates/rc" + std::to_string(rc) + "/" + kModalityNames[static_cast<int>(m)];
  Node* value = g.sigmoid(g.add(g.matmul(seq, g.param(store_->at(p + "/w"))), g.param(store_->at(p + "/b"))));
  return g.mul(value, seq);
}

FusedFeatures FusionModule::fuse(Graph& g, const std::array<ModalEmbedding, kModalityCount>& embeds, bool training,
                                 bool gates_passthrough) const {
  std::array<Node*, kModalityCount> seqs{};
  for (int m = 0; m < kModalityCount; ++m) seqs[static_cast<size_t>(m)] = embeds[static_cast<size_t>(m)].seq;
  FusedFeatures out;
  out.common = common_.forward(g, seqs, training);
  out.adaptive.reserve(static_cast<size_t>(cfg_.r));
  out.final.reserve(static_cast<size_t>(cfg_.r));
  for (int j = 0; j < cfg_.r; ++j) {
    std::array<Node*, kModalityCount> gated{};
    for (int m = 0; m < kModalityCount; ++m) {
      Node* seq = seqs[static_cast<size_t>(m)];
      gated[static_cast<size_t>(m)] =
          (cfg_.gates_enabled && !gates_passthrough) ? gate(g, j, static_cast<Modality>(m), seq) : seq;
    }
    const CmtStack& stack = adaptive_[cfg_.share_adaptive ? 0 : static_cast<size_t>(j)];
    Node* ea = stack.forward(g, gated, training);
    out.adaptive.push_back(ea);
    out.final.push_back(g.add(out.common, ea));
  }
  return out;
}

}  // namespace rcrank
