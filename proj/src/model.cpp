#include "rcrank/model.hpp"

#include <algorithm>
#include <cmath>

namespace rcrank {

namespace {

const char* kFusionModeNames[] = {"cross_modal", "concat", "direct"};

}  // namespace

const char* fusion_mode_name(FusionMode m) { return kFusionModeNames[static_cast<int>(m)]; }

FusionMode fusion_mode_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i)
    if (name == kFusionModeNames[i]) return static_cast<FusionMode>(i);
  raise(ErrorCode::InvalidConfig, "unknown fusion mode: " + name);
}

json ModelConfig::to_json() const {
  json j;
  j["d"] = enc.d;
  j["vocab_size"] = enc.vocab_size;
  j["max_sql_len"] = enc.max_sql_len;
  j["sql_layers"] = enc.sql_layers;
  j["sql_heads"] = enc.sql_heads;
  j["plan_layers"] = enc.plan_layers;
  j["plan_heads"] = enc.plan_heads;
  j["plan_struct_bias"] = enc.plan_struct_bias;
  j["plan_dist_buckets"] = enc.plan_dist_buckets;
  j["log_h1"] = enc.log_h1;
  j["log_h2"] = enc.log_h2;
  j["kpi_q"] = enc.kpi_q;
  j["kpi_t"] = enc.kpi_t;
  j["kpi_c1"] = enc.kpi_c1;
  j["kpi_c2"] = enc.kpi_c2;
  j["dropout"] = enc.dropout;
  j["fusion_blocks"] = fusion_blocks;
  j["main_modality"] = modality_name(main_modality);
  j["share_adaptive"] = share_adaptive;
  j["per_rc_heads"] = per_rc_heads;
  j["gates_enabled"] = gates_enabled;
  j["fusion"] = fusion_mode_name(fusion);
  j["active"] = active;
  j["r"] = r;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.enc.d = j.at("d").get<int>();
  c.enc.vocab_size = j.at("vocab_size").get<int>();
  c.enc.max_sql_len = j.at("max_sql_len").get<int>();
  c.enc.sql_layers = j.at("sql_layers").get<int>();
  c.enc.sql_heads = j.at("sql_heads").get<int>();
  c.enc.plan_layers = j.at("plan_layers").get<int>();
  c.enc.plan_heads = j.at("plan_heads").get<int>();
  c.enc.plan_struct_bias = j.at("plan_struct_bias").get<bool>();
  c.enc.plan_dist_buckets = j.at("plan_dist_buckets").get<int>();
  c.enc.log_h1 = j.at("log_h1").get<int>();
  c.enc.log_h2 = j.at("log_h2").get<int>();
  c.enc.kpi_q = j.at("kpi_q").get<int>();
  c.enc.kpi_t = j.at("kpi_t").get<int>();
  c.enc.kpi_c1 = j.at("kpi_c1").get<int>();
  c.enc.kpi_c2 = j.at("kpi_c2").get<int>();
  c.enc.dropout = j.at("dropout").get<double>();
  c.fusion_blocks = j.at("fusion_blocks").get<int>();
  c.main_modality = modality_from_name(j.at("main_modality").get<std::string>());
  c.share_adaptive = j.at("share_adaptive").get<bool>();
  c.per_rc_heads = j.at("per_rc_heads").get<bool>();
  c.gates_enabled = j.at("gates_enabled").get<bool>();
  c.fusion = fusion_mode_from_name(j.at("fusion").get<std::string>());
  c.active = j.at("active").get<std::array<bool, kModalityCount>>();
  c.r = j.at("r").get<int>();
  return c;
}

int ModelConfig::active_count() const {
  int n = 0;
  for (bool b : active) n += b ? 1 : 0;
  return n;
}

json norm_to_json(const NormStats& n) {
  json j;
  j["log_mean"] = n.log_mean;
  j["log_std"] = n.log_std;
  j["kpi_mean"] = n.kpi_mean;
  j["kpi_std"] = n.kpi_std;
  return j;
}

NormStats norm_from_json(const json& j) {
  NormStats n;
  auto lm = j.at("log_mean").get<std::vector<double>>();
  auto ls = j.at("log_std").get<std::vector<double>>();
  std::copy(lm.begin(), lm.end(), n.log_mean.begin());
  std::copy(ls.begin(), ls.end(), n.log_std.begin());
  n.kpi_mean = j.at("kpi_mean").get<std::vector<double>>();
  n.kpi_std = j.at("kpi_std").get<std::vector<double>>();
  return n;
}

RCRankModel::RCRankModel(ModelConfig cfg, std::vector<std::string> catalog, NormStats norm)
    : cfg_(std::move(cfg)), catalog_(std::move(catalog)), norm_(std::move(norm)),
      params_(std::make_unique<ParamStore>()) {
  if (static_cast<int>(catalog_.size()) != cfg_.r)
    raise(ErrorCode::InvalidConfig, "catalog size does not match config r");
  if (cfg_.enc.vocab_size <= 0) cfg_.enc.vocab_size = Vocabulary::builtin().size();
  if (!cfg_.active[static_cast<size_t>(cfg_.main_modality)])
    raise(ErrorCode::InvalidConfig, "main modality must be active");
}

void RCRankModel::set_main_modality(Modality m) {
  if (initialized_) raise(ErrorCode::InvalidState, "main modality is fixed once weights are initialized");
  cfg_.main_modality = m;
}

void RCRankModel::init_weights(uint64_t seed) {
  if (initialized_) raise(ErrorCode::InvalidState, "weights already initialized");
  enc_s_.emplace(*params_, cfg_.enc, seed);
  enc_p_.emplace(*params_, cfg_.enc, seed);
  enc_l_.emplace(*params_, cfg_.enc, seed);
  enc_i_.emplace(*params_, cfg_.enc, seed);
  dec_i_.emplace(*params_, cfg_.enc, seed);
  params_->create("agg/type_emb", {3, cfg_.enc.d}, Init::Normal02, seed);
  agg_layer_.emplace(*params_, "agg/l0", cfg_.enc.d, cfg_.enc.sql_heads, cfg_.enc.dropout, seed);
  params_->create("agg/head_w", {cfg_.enc.d, cfg_.enc.d}, Init::XavierUniform, seed);
  params_->create("agg/head_b", {1, cfg_.enc.d}, Init::Zeros, seed);

  const int d = cfg_.enc.d;
  switch (cfg_.fusion) {
    case FusionMode::CrossModal: {
      FusionConfig fc;
      fc.d = d;
      fc.blocks = cfg_.fusion_blocks;
      fc.dropout = cfg_.enc.dropout;
      fc.main_modality = cfg_.main_modality;
      fc.r = cfg_.r;
      fc.share_adaptive = cfg_.share_adaptive;
      fc.gates_enabled = cfg_.gates_enabled;
      fusion_.emplace(*params_, fc, seed);
      break;
    }
    case FusionMode::Concat: {
      int k = cfg_.active_count();
      params_->create("fusion_concat/wc", {k * d, d}, Init::XavierUniform, seed);
      params_->create("fusion_concat/bc", {1, d}, Init::Zeros, seed);
      params_->create("fusion_concat/wa", {k * d, d}, Init::XavierUniform, seed);
      params_->create("fusion_concat/ba", {1, d}, Init::Zeros, seed);
      if (cfg_.gates_enabled) {
        for (int j = 0; j < cfg_.r; ++j)
          for (int m = 0; m < kModalityCount; ++m) {
            if (!cfg_.active[static_cast<size_t>(m)]) continue;
            std::string p = "gates/rc" + std::to_string(j) + "/" + modality_name(static_cast<Modality>(m));
            params_->create(p + "/w", {d, d}, Init::XavierUniform, seed);
            params_->create(p + "/b", {1, d}, Init::Zeros, seed);
          }
      }
      break;
    }
    case FusionMode::Direct: {
      int k = cfg_.active_count();
      params_->create("direct/w1", {k * d, d}, Init::XavierUniform, seed);
      params_->create("direct/b1", {1, d}, Init::Zeros, seed);
      params_->create("direct/w2", {d, cfg_.r}, Init::XavierUniform, seed);
      params_->create("direct/b2", {1, cfg_.r}, Init::Zeros, seed);
      break;
    }
  }
  if (cfg_.fusion != FusionMode::Direct) {
    auto head = [&](const std::string& prefix) {
      params_->create(prefix + "/w1", {d, d}, Init::XavierUniform, seed);
      params_->create(prefix + "/b1", {1, d}, Init::Zeros, seed);
      params_->create(prefix + "/w2", {d, 1}, Init::XavierUniform, seed);
      params_->create(prefix + "/b2", {1, 1}, Init::Zeros, seed);
    };
    if (cfg_.per_rc_heads) {
      for (int j = 0; j < cfg_.r; ++j) head("head/rc" + std::to_string(j));
    } else {
      head("head");
    }
  }
  initialized_ = true;
}

namespace {

// Zero-variance training fields would blow up out-of-split values through the
// 1e-6 std floor, so model inputs clamp to +-10 standard deviations.
constexpr double kZClamp = 10.0;

double clamp_z(double z) { return std::clamp(z, -kZClamp, kZClamp); }

}  // namespace

LogVector RCRankModel::normalized_log(const LogVector& raw) const {
  LogVector out;
  for (int i = 0; i < kLogFieldCount; ++i)
    out[i] = clamp_z((raw[i] - norm_.log_mean[static_cast<size_t>(i)]) /
                     std::max(norm_.log_std[static_cast<size_t>(i)], 1e-6));
  return out;
}

KpiMatrix RCRankModel::normalized_kpis(const KpiMatrix& raw) const {
  KpiMatrix out = raw;
  for (int c = 0; c < raw.q; ++c) {
    double mean = c < static_cast<int>(norm_.kpi_mean.size()) ? norm_.kpi_mean[static_cast<size_t>(c)] : 0.0;
    double sd = c < static_cast<int>(norm_.kpi_std.size()) ? std::max(norm_.kpi_std[static_cast<size_t>(c)], 1e-6) : 1.0;
    for (int k = 0; k < raw.t; ++k) out.at(c, k) = clamp_z((raw.at(c, k) - mean) / sd);
  }
  return out;
}

std::array<ModalEmbedding, kModalityCount> RCRankModel::encode(Graph& g, const QueryRecord& rec,
                                                               const EncodeOptions& opts) const {
  if (!initialized_) raise(ErrorCode::InvalidState, "model not initialized");
  std::array<ModalEmbedding, kModalityCount> out{};
  if (cfg_.active[0]) out[0] = enc_s_->forward(g, rec.sql, opts);
  if (cfg_.active[1]) out[1] = enc_p_->forward(g, rec.plan, opts);
  if (cfg_.active[2]) out[2] = enc_l_->forward(g, normalized_log(rec.log_raw), opts);
  if (cfg_.active[3]) out[3] = enc_i_->forward(g, normalized_kpis(rec.kpis), opts);
  return out;
}

FusedFeatures RCRankModel::fuse(Graph& g, const std::array<ModalEmbedding, kModalityCount>& embeds, bool training,
                                bool gates_passthrough) const {
  if (cfg_.fusion == FusionMode::CrossModal) return fusion_->fuse(g, embeds, training, gates_passthrough);
  if (cfg_.fusion == FusionMode::Concat) {
    std::vector<Node*> pooled;
    for (int m = 0; m < kModalityCount; ++m)
      if (cfg_.active[static_cast<size_t>(m)]) pooled.push_back(embeds[static_cast<size_t>(m)].pooled);
    Node* cat = g.concat(pooled, 1);
    FusedFeatures out;
    out.common = g.relu(g.add(g.matmul(cat, g.param(params_->at("fusion_concat/wc"))),
                              g.param(params_->at("fusion_concat/bc"))));
    for (int j = 0; j < cfg_.r; ++j) {
      std::vector<Node*> gated;
      for (int m = 0; m < kModalityCount; ++m) {
        if (!cfg_.active[static_cast<size_t>(m)]) continue;
        Node* p = embeds[static_cast<size_t>(m)].pooled;
        if (cfg_.gates_enabled && !gates_passthrough) {
          std::string gp = "gates/rc" + std::to_string(j) + "/" + modality_name(static_cast<Modality>(m));
          Node* v = g.sigmoid(g.add(g.matmul(p, g.param(params_->at(gp + "/w"))), g.param(params_->at(gp + "/b"))));
          p = g.mul(v, p);
        }
        gated.push_back(p);
      }
      Node* ea = g.relu(g.add(g.matmul(g.concat(gated, 1), g.param(params_->at("fusion_concat/wa"))),
                              g.param(params_->at("fusion_concat/ba"))));
      out.adaptive.push_back(ea);
      out.final.push_back(g.add(out.common, ea));
    }
    return out;
  }
  raise(ErrorCode::InvalidState, "direct fusion mode has no fused features");
}

Node* RCRankModel::estimate(Graph& g, const FusedFeatures& fused) const {
  std::vector<Node*> estimates;
  for (int j = 0; j < cfg_.r; ++j) {
    std::string prefix = cfg_.per_rc_heads ? "head/rc" + std::to_string(j) : "head";
    Node* h = g.relu(g.add(g.matmul(fused.final[static_cast<size_t>(j)], g.param(params_->at(prefix + "/w1"))),
                           g.param(params_->at(prefix + "/b1"))));
    Node* y = g.add(g.matmul(h, g.param(params_->at(prefix + "/w2"))), g.param(params_->at(prefix + "/b2")));
    estimates.push_back(y);
  }
  return g.concat(estimates, 0);  // {r,1}
}

Node* RCRankModel::forward_estimates(Graph& g, const QueryRecord& rec) const {
  auto embeds = encode(g, rec, {});
  if (cfg_.fusion == FusionMode::Direct) {
    std::vector<Node*> pooled;
    for (int m = 0; m < kModalityCount; ++m)
      if (cfg_.active[static_cast<size_t>(m)]) pooled.push_back(embeds[static_cast<size_t>(m)].pooled);
    Node* cat = g.concat(pooled, 1);
    Node* h = g.relu(g.add(g.matmul(cat, g.param(params_->at("direct/w1"))), g.param(params_->at("direct/b1"))));
    Node* y = g.add(g.matmul(h, g.param(params_->at("direct/w2"))), g.param(params_->at("direct/b2")));
    return g.transpose(y);  // {r,1}
  }
  FusedFeatures fused = fuse(g, embeds, g.training());
  return estimate(g, fused);
}

std::vector<double> RCRankModel::predict(const QueryRecord& rec) const {
  Graph g(false);
  Node* y = forward_estimates(g, rec);
  return y->value().vec();
}

Node* RCRankModel::decode_kpi(Graph& g, Node* pooled) const { return dec_i_->forward(g, pooled); }

Node* RCRankModel::kpi_target(Graph& g, const QueryRecord& rec) const {
  KpiMatrix norm = normalized_kpis(rec.kpis);
  return g.constant(Tensor({norm.q, norm.t}, norm.values));
}

Tensor RCRankModel::sql_token_target(int token_id) const {
  const Tensor& emb = params_->at("enc_s/tok_emb").value;
  Tensor out({1, emb.cols()});
  for (int c = 0; c < emb.cols(); ++c) out.at(0, c) = emb.at(token_id, c);
  return out;
}

Tensor RCRankModel::plan_node_target(const PlanNode& node) const {
  const Tensor& emb = params_->at("enc_p/op_emb").value;
  const Tensor& num_w = params_->at("enc_p/num_w").value;
  Tensor out({1, emb.cols()});
  double f0 = std::log1p(node.est_rows);
  double f1 = std::log1p(node.est_cost * 1000.0);
  for (int c = 0; c < emb.cols(); ++c)
    out.at(0, c) = emb.at(static_cast<int>(node.op), c) + f0 * num_w.at(0, c) + f1 * num_w.at(1, c);
  return out;
}

Tensor RCRankModel::log_embedding_target(const LogVector& normalized) const {
  Graph g(false);
  ModalEmbedding e = enc_l_->forward(g, normalized, {});
  return e.pooled->value();
}

void RCRankModel::save(const std::string& path, const json& extra_meta) const {
  json meta;
  meta["kind"] = "model";
  meta["config"] = cfg_.to_json();
  meta["catalog"] = catalog_;
  meta["norm"] = norm_to_json(norm_);
  for (auto& [k, v] : extra_meta.items()) meta[k] = v;
  save_checkpoint(path, *params_, meta.dump());
}

json RCRankModel::peek_meta(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  return json::parse(data.meta_json);
}

RCRankModel RCRankModel::load(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  json meta = json::parse(data.meta_json);
  if (meta.value("kind", "") != "model") raise(ErrorCode::SchemaError, "not a model checkpoint: " + path);
  RCRankModel model(ModelConfig::from_json(meta.at("config")), meta.at("catalog").get<std::vector<std::string>>(),
                    norm_from_json(meta.at("norm")));
  model.init_weights(0);
  for (auto& [name, tensor] : data.entries) {
    Parameter* p = model.params_->find(name);
    if (!p) raise(ErrorCode::SchemaError, "checkpoint entry " + name + " not in model");
    if (!p->value.same_shape(tensor)) raise(ErrorCode::SchemaError, "shape mismatch for " + name);
    p->value = tensor;
  }
  return model;
}

void RCRankModel::save_encoder_checkpoint(const std::string& path) const {
  ParamStore subset;
  for (const Parameter* p : params_->ordered()) {
    bool keep = p->name.starts_with("enc_s/") || p->name.starts_with("enc_p/") || p->name.starts_with("enc_l/") ||
                p->name.starts_with("enc_i/") || p->name.starts_with("dec_i/") || p->name.starts_with("agg/");
    if (!keep) continue;
    Parameter& np = subset.create(p->name, p->value.shape(), Init::Zeros, 0);
    np.value = p->value;
  }
  json meta;
  meta["kind"] = "encoders";
  meta["config"] = cfg_.to_json();
  save_checkpoint(path, subset, meta.dump());
}

void RCRankModel::load_encoder_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  json meta = json::parse(data.meta_json);
  if (meta.value("kind", "") != "encoders") raise(ErrorCode::SchemaError, "not an encoder checkpoint: " + path);
  for (auto& [name, tensor] : data.entries) {
    Parameter* p = params_->find(name);
    if (!p) raise(ErrorCode::SchemaError, "checkpoint entry " + name + " not in model");
    if (!p->value.same_shape(tensor)) raise(ErrorCode::SchemaError, "shape mismatch for " + name);
    p->value = tensor;
  }
}

}  // namespace rcrank
