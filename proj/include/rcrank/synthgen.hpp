#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "rcrank/domain.hpp"
#include "rcrank/rng.hpp"

namespace rcrank {

// ---------------------------------------------------------------------------
// Simulated database
// ---------------------------------------------------------------------------

struct TableDef {
  std::string name;
  int64_t row_count = 1;
  std::vector<std::string> columns;
  std::vector<std::string> indexed_columns;  // sorted
  double stats_staleness = 0.0;  // [0,1]
  double distribution_skew = 0.0;  // [0,1]
  bool distributed = false;
  double row_width = 100.0;  // bytes

  bool has_index(const std::string& col) const;
};

struct DbState {
  std::vector<TableDef> tables;
  std::array<double, 6> kpi_base_mean{};
  std::array<double, 6> kpi_base_std{};
  uint64_t seed = 0;

  const TableDef& table(const std::string& name) const;  // InvalidSpec on unknown
};

DbState make_db_state(uint64_t seed);

// ---------------------------------------------------------------------------
// Root causes
// ---------------------------------------------------------------------------

// Canonical catalog slots; the 5-cause catalog is the first five.
enum RcIndex : int {
  kRcStatistics = 0,
  kRcJoinOrder = 1,
  kRcIndex = 2,
  kRcDistributionKey = 3,
  kRcQueryRewrite = 4,
  kRcRedundantIndex = 5,
  kRcRepeatedSubquery = 6,
  kRcComplexJoin = 7,
  kRcFullTableUpdate = 8,
  kRcLargeInsert = 9,
};

struct RootCauseCatalog {
  std::vector<std::string> names;

  static RootCauseCatalog five();
  static RootCauseCatalog ten();
  static RootCauseCatalog of_size(int r);  // r in {5,10}

  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// Query specs and the cost model
// ---------------------------------------------------------------------------

enum class TemplateKind { Filter = 0, Join2, Join3, Agg, Subquery, Update, Insert };

struct QuerySpec {
  int template_id = 0;
  TemplateKind kind = TemplateKind::Filter;
  std::vector<std::string> tables;           // referenced tables, t0 is primary
  int join_count = 0;
  std::vector<std::string> predicate_columns;  // parallel to tables ("" = none)
  std::vector<double> selectivities;           // parallel to tables
  std::vector<double> defects;                 // severity per catalog slot
  double join_order_quality = 1.0;             // mirrors 1 - severity(join_order)
  double rewrite_waste = 0.0;                  // mirrors severity(query_rewrite)
  double baseline_scale = 1.0;
  bool order_by = false;
  std::string order_column;
  std::string group_column;
  uint64_t noise_seed = 0;

  double severity(int rc) const {
    return rc >= 0 && rc < static_cast<int>(defects.size()) ? defects[static_cast<size_t>(rc)] : 0.0;
  }
};

struct CostModel {
  double cost_per_row = 2.5e-7;  // seconds
  double filter_factor = 0.08;
  double join_factor = 2.0;
  double sort_factor = 0.35;
  double agg_factor = 0.5;
  double exchange_factor = 0.9;
  double project_factor = 0.05;
  double write_factor = 3.0;
  double subquery_factor = 0.8;
  double index_cost_base = 0.04;  // fraction of a full scan
  double index_cost_sel = 0.25;
  // Defect multiplier slopes: multiplier is 1 + slope * severity (scaled by
  // fixed positive table attributes where noted), so it is exactly 1 at
  // severity 0 and strictly above 1 otherwise.
  double stat_slope = 1.6;
  double join_order_slope = 3.5;
  double dk_slope = 3.5;
  double rewrite_share = 0.9;
  double repeated_subquery_slope = 4.0;
  double complex_join_slope = 2.5;
  double redundant_index_slope = 2.5;
  double full_update_slope = 3.0;
  double large_insert_slope = 3.0;
  double sigma_noise = 0.08;
};

// One operator of the true execution profile; runtime is
// sum(base_cost * mult) over operators.
struct ExecOp {
  OpKind kind = OpKind::Scan;
  double base_cost = 0.0;
  double mult = 1.0;
  double rows_out = 0.0;
  double rows_scanned = 0.0;
  double mem_kb = 0.0;
  double shuffle_bytes = 0.0;
  int table_index = -1;
  std::string label;
};

// Plan tree (planner view) and execution profile built side by side; node i
// of the plan corresponds to ops[i].
struct BuiltQuery {
  std::vector<PlanNode> nodes;
  std::vector<std::pair<int, int>> edges;
  std::vector<ExecOp> ops;
  double rows_returned = 0.0;

  double noiseless_runtime() const;
};

BuiltQuery build_query(const QuerySpec& spec, const DbState& db, const CostModel& cost);

double simulate_runtime(const QuerySpec& spec, const DbState& db, const CostModel& cost, bool noiseless);
QuerySpec revise(const QuerySpec& spec, int rc_index);
// Fractional runtime improvement of a revision; the core impact formula.
double impact_from_runtimes(double original_s, double revised_s);
double compute_impact(const QuerySpec& spec, int rc_index, const DbState& db, const CostModel& cost);
std::vector<double> compute_impact_vector(const QuerySpec& spec, const DbState& db, const CostModel& cost, int r);

std::string render_sql(const QuerySpec& spec, const DbState& db, Rng& rng);

// ---------------------------------------------------------------------------
// Workload generation
// ---------------------------------------------------------------------------

struct GenConfig {
  int total = 12000;
  int labeled_target = 2000;
  int catalog_size = 5;
  double delta = 1.0;    // slow-query threshold, seconds
  double epsilon = 0.10;  // valid-root-cause threshold
  double eta = 0.02;      // labels keep |y - epsilon| >= eta
  double top_gap = 0.02;  // separation of the top two impacts
  double noise_sigma = 0.08;
  int kpi_q = 6;
  int kpi_t = 60;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
};

struct GeneratedWorkload {
  Dataset dataset;
  std::vector<QuerySpec> specs;  // parallel to dataset.records
  DbState db;
  CostModel cost;
};

GeneratedWorkload generate_workload(const GenConfig& cfg, uint64_t seed);

// Sidecar with everything needed to re-run the simulator on stored records.
struct SpecsFile {
  std::map<std::string, QuerySpec> by_id;
  DbState db;
  CostModel cost;
};

void save_specs(const GeneratedWorkload& wl, const std::string& path);
SpecsFile load_specs(const std::string& path);

}  // namespace rcrank
