#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcrank/error.hpp"
#include "rcrank/vocab.hpp"

namespace rcrank {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Execution plan DAG
// ---------------------------------------------------------------------------

enum class OpKind {
  Scan,
  IndexScan,
  Filter,
  HashJoin,
  NestedLoopJoin,
  MergeJoin,
  Sort,
  Aggregate,
  Project,
  Exchange,
  Insert,
  Update,
  SubqueryScan,
};
constexpr int kOpKindCount = 13;

const char* op_kind_name(OpKind k);
OpKind op_kind_from_name(const std::string& name);  // InvalidPlan on unknown

struct PlanNode {
  OpKind op = OpKind::Scan;
  double est_rows = 0.0;
  double est_cost = 0.0;
  std::string label;  // table/column annotation; optional in the file format
};

// Directed acyclic graph of plan operators. Edges run from an operator to the
// next operation consuming its output, so the root is the unique node without
// an outgoing edge.
class PlanDag {
 public:
  static PlanDag from_parts(std::vector<PlanNode> nodes, std::vector<std::pair<int, int>> edges);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const std::vector<PlanNode>& nodes() const { return nodes_; }
  const PlanNode& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  int root() const { return root_; }
  const std::vector<int>& topo_order() const { return topo_; }  // children before parents
  const std::vector<int>& children(int i) const { return children_[static_cast<size_t>(i)]; }
  // Undirected shortest-path distances, entries capped at `cap`.
  std::vector<std::vector<int>> undirected_distances(int cap) const;

 private:
  std::vector<PlanNode> nodes_;
  std::vector<std::pair<int, int>> edges_;  // (from child, to parent)
  std::vector<std::vector<int>> children_;
  std::vector<int> topo_;
  int root_ = 0;
};

// Accepts a nested tree ({op, est_rows, est_cost, children, label?}) or a flat
// {nodes, edges} document.
PlanDag parse_plan(const json& plan_json);
json plan_to_json(const PlanDag& dag);

// ---------------------------------------------------------------------------
// Logs, KPIs, records
// ---------------------------------------------------------------------------

constexpr int kLogFieldCount = 13;
const std::array<std::string, kLogFieldCount>& log_field_names();
int log_field_index(const std::string& name);  // -1 if unknown

struct LogVector {
  std::array<double, kLogFieldCount> v{};
  double& operator[](int i) { return v[static_cast<size_t>(i)]; }
  double operator[](int i) const { return v[static_cast<size_t>(i)]; }
};

struct KpiMatrix {
  int q = 0, t = 0;
  std::vector<double> values;  // row-major q x t
  double& at(int c, int k) { return values[static_cast<size_t>(c) * t + k]; }
  double at(int c, int k) const { return values[static_cast<size_t>(c) * t + k]; }
};

std::vector<std::string> kpi_channel_names(int q);

struct NormStats {
  std::array<double, kLogFieldCount> log_mean{}, log_std{};
  std::vector<double> kpi_mean, kpi_std;  // per channel

  NormStats() {
    log_std.fill(1.0);
  }
};

// Standardizes a raw field map against training statistics (std floor 1e-6).
LogVector vectorize_log(const std::map<std::string, double>& raw, const NormStats& norm);

using ImpactVector = std::vector<double>;

struct QueryRecord {
  std::string id;
  std::string sql_text;
  TokenSeq sql;
  PlanDag plan;
  LogVector log_raw;  // unnormalized, as stored on disk
  KpiMatrix kpis;     // unnormalized
  double runtime_s = 0.0;
  std::string split = "pretrain";  // train | val | test | pretrain
  std::optional<ImpactVector> impacts;

  bool labeled() const { return impacts.has_value(); }
};

struct Dataset {
  std::vector<std::string> root_cause_catalog;
  std::vector<QueryRecord> records;
  NormStats norm;  // computed from split=train records only
  int kpi_q = 0, kpi_t = 0;

  int r() const { return static_cast<int>(root_cause_catalog.size()); }
  size_t labeled_count() const;
};

// JSON-lines: header {"catalog": [...]}, then one record object per line.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);
json record_to_json(const QueryRecord& rec);
QueryRecord record_from_json(const json& j, int expected_r, int line_no);
void compute_norm_stats(Dataset& ds);

// Deterministic 8:1:1-style split of the labeled slow queries; unlabeled
// records all go to the pretraining pool inside the train dataset.
std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& ds, std::array<double, 3> ratios, uint64_t seed);

// Partition honoring the split tags already present in the file; the train
// dataset keeps the pretraining pool.
std::tuple<Dataset, Dataset, Dataset> partition_by_tags(const Dataset& ds);

}  // namespace rcrank
