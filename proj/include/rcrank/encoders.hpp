#pragma once

#include <string>
#include <vector>

#include "rcrank/domain.hpp"
#include "rcrank/graph.hpp"
#include "rcrank/params.hpp"

namespace rcrank {

// Per-token/node/slot embeddings plus a pooled summary, all width d.
struct ModalEmbedding {
  Node* seq = nullptr;     // {n, d}
  Node* pooled = nullptr;  // {1, d}
  bool truncated = false;
};

struct EncoderConfig {
  int d = 32;
  int vocab_size = 0;
  int max_sql_len = 128;
  int sql_layers = 2;
  int sql_heads = 4;
  int plan_layers = 2;
  int plan_heads = 4;
  bool plan_struct_bias = true;
  int plan_dist_buckets = 9;  // tree distances 0..7, >=8 bucketed
  int log_h1 = 64;
  int log_h2 = 32;
  int kpi_q = 6;
  int kpi_t = 60;
  int kpi_c1 = 4;
  int kpi_c2 = 8;
  double dropout = 0.1;
};

// Positions replaced by the mask sentinel before encoding.
struct EncodeOptions {
  const std::vector<int>* masked_sql = nullptr;
  const std::vector<int>* masked_plan = nullptr;
  const std::vector<int>* masked_log = nullptr;
};

// Post-LN transformer layer with multi-head self-attention; shared by the
// SQL/plan encoders and the pretraining aggregator.
struct TransformerLayer {
  TransformerLayer(ParamStore& store, const std::string& prefix, int d, int heads, double dropout, uint64_t seed);
  Node* forward(Graph& g, Node* x, Node* attn_bias) const;  // bias {n,n} per head or null

  ParamStore* store;
  std::string prefix;
  int d, heads;
  double dropout;
};

class SqlEncoder {
 public:
  SqlEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed);
  ModalEmbedding forward(Graph& g, const TokenSeq& tokens, const EncodeOptions& opts) const;

 private:
  ParamStore* store_;
  EncoderConfig cfg_;
  std::vector<TransformerLayer> layers_;
};

class PlanEncoder {
 public:
  PlanEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed);
  ModalEmbedding forward(Graph& g, const PlanDag& plan, const EncodeOptions& opts) const;

 private:
  ParamStore* store_;
  EncoderConfig cfg_;
  std::vector<TransformerLayer> layers_;
};

class LogEncoder {
 public:
  LogEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed);
  // Input is the normalized 13-field vector.
  ModalEmbedding forward(Graph& g, const LogVector& log, const EncodeOptions& opts) const;

 private:
  ParamStore* store_;
  EncoderConfig cfg_;
};

class KpiEncoder {
 public:
  KpiEncoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed);
  // Input is the normalized q x t matrix.
  ModalEmbedding forward(Graph& g, const KpiMatrix& kpis, const EncodeOptions& opts) const;

 private:
  ParamStore* store_;
  EncoderConfig cfg_;
};

class KpiDecoder {
 public:
  KpiDecoder(ParamStore& store, const EncoderConfig& cfg, uint64_t seed);
  Node* forward(Graph& g, Node* pooled) const;  // {1,d} -> {q,t}

 private:
  ParamStore* store_;
  EncoderConfig cfg_;
};

// Sinusoidal position encodings, cached per length.
Tensor sinusoidal_positions(int n, int d);

}  // namespace rcrank
