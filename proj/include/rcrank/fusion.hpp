#pragma once

#include <array>
#include <string>
#include <vector>

#include "rcrank/encoders.hpp"

namespace rcrank {

enum class Modality : int { SQL = 0, Plan = 1, Log = 2, KPI = 3 };
constexpr int kModalityCount = 4;
const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Scaled dot-product cross-attention: queries from the main modality only.
Node* cross_attention(Graph& g, Node* main_seq, Node* other_seq, Node* wq, Node* wk, Node* wv);

struct FusionConfig {
  int d = 32;
  int blocks = 3;
  double dropout = 0.1;
  Modality main_modality = Modality::SQL;
  int r = 5;
  bool share_adaptive = true;
  bool gates_enabled = true;
};

// Stack of cross-modal blocks. Per block: one query projection for the main
// modality, key/value projections per modality, a feed-forward merge of the
// four attention features, residual + layer norm.
class CmtStack {
 public:
  CmtStack(ParamStore& store, const std::string& prefix, const FusionConfig& cfg, uint64_t seed);
  // seqs indexed by Modality; returns the pooled {1,d} fused feature.
  Node* forward(Graph& g, const std::array<Node*, kModalityCount>& seqs, bool training) const;

 private:
  ParamStore* store_;
  std::string prefix_;
  FusionConfig cfg_;
};

struct FusedFeatures {
  Node* common = nullptr;               // {1,d}
  std::vector<Node*> adaptive;          // r x {1,d}
  std::vector<Node*> final;             // r x {1,d}, final[j] = common + adaptive[j]
};

// Common C-CMT + per-root-cause gated A-CMT fusion (Eq. 9-12 stack).
class FusionModule {
 public:
  FusionModule(ParamStore& store, const FusionConfig& cfg, uint64_t seed);
  FusedFeatures fuse(Graph& g, const std::array<ModalEmbedding, kModalityCount>& embeds, bool training,
                     bool gates_passthrough = false) const;
  Node* gate(Graph& g, int rc, Modality m, Node* seq) const;  // sigmoid(FC(E)) .* E
  const FusionConfig& config() const { return cfg_; }

 private:
  ParamStore* store_;
  FusionConfig cfg_;
  CmtStack common_;
  std::vector<CmtStack> adaptive_;  // one if shared, else r
};

}  // namespace rcrank
