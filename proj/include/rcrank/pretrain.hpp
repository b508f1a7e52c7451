#pragma once

#include <string>
#include <vector>

#include "rcrank/model.hpp"

namespace rcrank {

enum class PairKind { Table, Column, Predicate, Operation, Numeric };

// A matched critical span: SQL token range <-> plan node for identifier
// kinds, log field slot <-> plan root for numeric kind.
struct AlignmentPair {
  PairKind kind = PairKind::Table;
  int sql_begin = -1, sql_end = -1;  // [begin, end)
  int plan_node = -1;
  int log_field = -1;
};

std::vector<AlignmentPair> match_critical_spans(const QueryRecord& rec);

struct MaskedSample {
  Modality masked_modality = Modality::SQL;
  std::vector<int> sql_positions;
  std::vector<int> plan_nodes;
  std::vector<int> log_fields;

  const std::vector<int>* sql() const { return sql_positions.empty() ? nullptr : &sql_positions; }
  const std::vector<int>* plan() const { return plan_nodes.empty() ? nullptr : &plan_nodes; }
  const std::vector<int>* log() const { return log_fields.empty() ? nullptr : &log_fields; }
};

// Chooses the masked modality and span set for one sample. Identifier pairs
// mask the SQL or plan side on a fair coin; numeric pairs mask the log side.
// Falls back to random 15% SQL-token masking when no pairs matched.
MaskedSample mask_for_pretraining(const QueryRecord& rec, const std::vector<AlignmentPair>& pairs, Rng& rng,
                                  double mask_frac = 0.15);

// One transformer block over the concatenated SQL/plan/log sequences with
// modality type embeddings; a linear head reads out each masked position.
// Returns one {1,d} prediction per target row in `target_rows`.
std::vector<Node*> aggregate_and_predict(Graph& g, const RCRankModel& model,
                                         const std::array<ModalEmbedding, kModalityCount>& embeds,
                                         const std::vector<int>& target_rows);

struct PretrainLossParts {
  Node* total = nullptr;
  double mask_term = 0.0;
  double kpi_term = 0.0;
  Modality masked_modality = Modality::SQL;
  int n_targets = 0;
};

// Masked-alignment regression plus KPI reconstruction for one record.
PretrainLossParts build_pretrain_loss(Graph& g, const RCRankModel& model, const QueryRecord& rec,
                                      const MaskedSample& mask, bool include_kpi = true);

struct PretrainConfig {
  int epochs = 5;
  int batch = 64;
  double lr = 3e-4;
  uint64_t seed = 0;
  double mask_frac = 0.15;
  bool mask_all_modalities = false;  // sum all three masked terms per sample
  int threads = 0;
};

struct PretrainEpochLog {
  int epoch = 0;
  double l_sql = 0.0, l_plan = 0.0, l_log = 0.0, l_kpis = 0.0;
  double total() const { return l_sql + l_plan + l_log + l_kpis; }
};

struct PretrainResult {
  std::vector<PretrainEpochLog> log;
};

// Self-supervised training of the encoder/decoder/aggregator weights on the
// pool; impact labels are never read. Deterministic under cfg.seed.
PretrainResult run_pretraining(RCRankModel& model, const Dataset& pool, const PretrainConfig& cfg);

void write_pretrain_log_csv(const PretrainResult& result, const std::string& path);

}  // namespace rcrank
