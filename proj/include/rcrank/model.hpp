#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rcrank/domain.hpp"
#include "rcrank/encoders.hpp"
#include "rcrank/fusion.hpp"

namespace rcrank {

enum class FusionMode { CrossModal, Concat, Direct };

const char* fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from_name(const std::string& name);

struct ModelConfig {
  EncoderConfig enc;
  int fusion_blocks = 3;
  Modality main_modality = Modality::SQL;
  bool share_adaptive = true;
  bool per_rc_heads = false;
  bool gates_enabled = true;
  FusionMode fusion = FusionMode::CrossModal;
  std::array<bool, kModalityCount> active{true, true, true, true};
  int r = 5;

  json to_json() const;
  static ModelConfig from_json(const json& j);
  int active_count() const;
};

// The full estimation model: four encoders, KPI decoder, pretraining
// aggregator, fusion stack, gates, and impact heads over one parameter store.
class RCRankModel {
 public:
  RCRankModel(ModelConfig cfg, std::vector<std::string> catalog, NormStats norm);

  // Main-modality routing is fixed at weight initialization.
  void set_main_modality(Modality m);
  void init_weights(uint64_t seed);
  bool initialized() const { return initialized_; }

  std::array<ModalEmbedding, kModalityCount> encode(Graph& g, const QueryRecord& rec,
                                                    const EncodeOptions& opts) const;
  FusedFeatures fuse(Graph& g, const std::array<ModalEmbedding, kModalityCount>& embeds, bool training,
                     bool gates_passthrough = false) const;
  Node* estimate(Graph& g, const FusedFeatures& fused) const;        // {r,1}
  Node* forward_estimates(Graph& g, const QueryRecord& rec) const;   // encode+fuse+estimate, any mode
  std::vector<double> predict(const QueryRecord& rec) const;         // eval mode
  Node* decode_kpi(Graph& g, Node* pooled) const;
  Node* kpi_target(Graph& g, const QueryRecord& rec) const;          // normalized {q,t} constant

  LogVector normalized_log(const LogVector& raw) const;
  KpiMatrix normalized_kpis(const KpiMatrix& raw) const;

  // Detached embedding-space targets for masked pretraining.
  Tensor sql_token_target(int token_id) const;
  Tensor plan_node_target(const PlanNode& node) const;
  Tensor log_embedding_target(const LogVector& normalized) const;

  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }
  const TransformerLayer& aggregator_layer() const { return *agg_layer_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::string>& catalog() const { return catalog_; }
  const NormStats& norm() const { return norm_; }

  void save(const std::string& path, const json& extra_meta = json::object()) const;
  static RCRankModel load(const std::string& path);
  static json peek_meta(const std::string& path);
  void save_encoder_checkpoint(const std::string& path) const;  // enc_*, dec_i, agg
  void load_encoder_checkpoint(const std::string& path);

 private:
  ModelConfig cfg_;
  std::vector<std::string> catalog_;
  NormStats norm_;
  // Heap-held so sub-module pointers into the store survive moves.
  std::unique_ptr<ParamStore> params_;
  std::optional<SqlEncoder> enc_s_;
  std::optional<PlanEncoder> enc_p_;
  std::optional<LogEncoder> enc_l_;
  std::optional<KpiEncoder> enc_i_;
  std::optional<KpiDecoder> dec_i_;
  std::optional<TransformerLayer> agg_layer_;
  std::optional<FusionModule> fusion_;
  bool initialized_ = false;
};

json norm_to_json(const NormStats& n);
NormStats norm_from_json(const json& j);

}  // namespace rcrank
