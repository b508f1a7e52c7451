#include "rcrank/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rcrank {

bool TableDef::has_index(const std::string& col) const {
  return std::find(indexed_columns.begin(), indexed_columns.end(), col) != indexed_columns.end();
}

const TableDef& DbState::table(const std::string& name) const {
  for (const TableDef& t : tables)
    if (t.name == name) return t;
  raise(ErrorCode::InvalidSpec, "unknown table: " + name);
}

DbState make_db_state(uint64_t seed) {
  struct SchemaEntry {
    const char* name;
    std::vector<const char*> columns;
    bool big;
  };
  static const std::vector<SchemaEntry> schema = {
      {"users", {"id", "name", "region", "status", "created"}, false},
      {"orders", {"id", "user_id", "qty", "price", "status", "created"}, true},
      {"lineitem", {"id", "order_id", "qty", "price", "discount"}, true},
      {"products", {"id", "name", "price", "category", "stock"}, false},
      {"customers", {"id", "name", "region", "segment"}, false},
      {"events", {"id", "user_id", "kind", "ts"}, true},
      {"sessions", {"id", "user_id", "duration", "device"}, false},
      {"payments", {"id", "order_id", "amount", "method", "status"}, true},
      {"inventory", {"id", "product_id", "stock", "warehouse"}, false},
      {"shipments", {"id", "order_id", "region", "weight", "status"}, true},
  };
  DbState db;
  db.seed = seed;
  Rng rng(Rng::splitmix(seed) ^ 0xdb57a7eULL);
  for (const auto& entry : schema) {
    TableDef t;
    t.name = entry.name;
    for (const char* c : entry.columns) t.columns.push_back(c);
    double lo = entry.big ? 1.2e6 : 1e4;
    double hi = entry.big ? 8e6 : 3e5;
    t.row_count = static_cast<int64_t>(std::exp(rng.uniform(std::log(lo), std::log(hi))));
    t.indexed_columns.push_back("id");
    // one extra indexed column sometimes
    if (rng.bernoulli(0.5) && t.columns.size() > 2) {
      t.indexed_columns.push_back(t.columns[1 + rng.uniform_int(t.columns.size() - 1)]);
    }
    std::sort(t.indexed_columns.begin(), t.indexed_columns.end());
    t.indexed_columns.erase(std::unique(t.indexed_columns.begin(), t.indexed_columns.end()),
                            t.indexed_columns.end());
    t.stats_staleness = rng.uniform(0.0, 1.0);
    t.distribution_skew = rng.uniform(0.0, 1.0);
    t.distributed = rng.bernoulli(entry.big ? 0.85 : 0.25);
    t.row_width = rng.uniform(60.0, 200.0);
    db.tables.push_back(std::move(t));
  }
  db.kpi_base_mean = {35.0, 45.0, 120.0, 5e5, 40.0, 92.0};
  db.kpi_base_std = {4.0, 3.0, 25.0, 8e4, 5.0, 2.5};
  return db;
}

RootCauseCatalog RootCauseCatalog::five() {
  return {{"statistics", "join_order", "index", "distribution_key", "query_rewrite"}};
}

RootCauseCatalog RootCauseCatalog::ten() {
  RootCauseCatalog c = five();
  c.names.insert(c.names.end(),
                 {"redundant_index", "repeated_subquery", "complex_join", "full_table_update", "large_insert"});
  return c;
}

RootCauseCatalog RootCauseCatalog::of_size(int r) {
  if (r == 5) return five();
  if (r == 10) return ten();
  raise(ErrorCode::InvalidConfig, "catalog size must be 5 or 10, got " + std::to_string(r));
}

int RootCauseCatalog::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (names[static_cast<size_t>(i)] == name) return i;
  return -1;
}

double BuiltQuery::noiseless_runtime() const {
  double total = 0.0;
  for (const ExecOp& op : ops) total += op.base_cost * op.mult;
  return total;
}

namespace {

// Foreign-key column of `from` pointing at table `to` ("orders" -> "user_id"
// via "users"), if the schema has one.
std::string fk_column(const TableDef& from, const std::string& to) {
  std::string stem = to;
  if (!stem.empty() && stem.back() == 's') stem.pop_back();
  std::string fk = stem + "_id";
  for (const std::string& c : from.columns)
    if (c == fk) return fk;
  return "id";
}

struct QueryBuilder {
  const QuerySpec& spec;
  const DbState& db;
  const CostModel& cm;
  BuiltQuery out;
  Rng render_rng;

  QueryBuilder(const QuerySpec& s, const DbState& d, const CostModel& c)
      : spec(s), db(d), cm(c), render_rng(Rng::splitmix(s.noise_seed) ^ 0x9e11ULL) {}

  double s_stat() const { return spec.severity(kRcStatistics); }
  double m_stat() const { return 1.0 + cm.stat_slope * s_stat(); }

  int add(OpKind kind, ExecOp op, const std::string& label, const std::vector<int>& children,
          double stale_hint) {
    op.kind = kind;
    op.label = label;
    PlanNode node;
    node.op = kind;
    node.label = label;
    // Planner view: estimates drift under stale statistics.
    double eps = s_stat() * (0.3 + 0.7 * stale_hint);
    double dir_rows = render_rng.bernoulli(0.5) ? 1.0 : -1.0;
    double dir_cost = render_rng.bernoulli(0.5) ? 1.0 : -1.0;
    node.est_rows = std::max(1.0, op.rows_out * std::exp(1.8 * eps * dir_rows));
    if (kind == OpKind::HashJoin || kind == OpKind::MergeJoin || kind == OpKind::NestedLoopJoin)
      node.est_rows *= 1.0 + 2.0 * spec.severity(kRcJoinOrder);
    node.est_cost = std::max(1e-7, op.base_cost * op.mult * std::exp(0.8 * eps * dir_cost));
    int index = static_cast<int>(out.nodes.size());
    out.nodes.push_back(std::move(node));
    out.ops.push_back(std::move(op));
    for (int c : children) out.edges.emplace_back(c, index);
    return index;
  }

  // Scan [+Filter] [+Exchange] for table slot k; returns top node and rows out.
  std::pair<int, double> scan_chain(size_t k, bool want_exchange) {
    const TableDef& t = db.table(spec.tables[k]);
    double rows = static_cast<double>(t.row_count);
    double sel = spec.selectivities[k];
    const std::string& pred = spec.predicate_columns[k];
    double full_cost = rows * cm.cost_per_row * spec.baseline_scale;
    ExecOp scan;
    scan.table_index = static_cast<int>(k);
    scan.mult = m_stat();
    OpKind scan_kind;
    double rows_out;
    if (pred.empty()) {
      scan_kind = OpKind::Scan;
      scan.base_cost = full_cost;
      scan.rows_scanned = rows;
      rows_out = rows;
    } else {
      double idx_frac = cm.index_cost_base + cm.index_cost_sel * sel;
      double degraded = k == 0 ? spec.severity(kRcIndex) : 0.0;
      double frac = idx_frac + degraded * (1.0 - idx_frac);
      scan_kind = degraded >= 0.5 ? OpKind::Scan : OpKind::IndexScan;
      scan.base_cost = full_cost * frac;
      scan.rows_scanned = rows * frac;
      rows_out = rows * sel;
    }
    scan.rows_out = pred.empty() ? rows_out : rows * sel;
    int top = add(scan_kind, scan, t.name, {}, t.stats_staleness);
    if (!pred.empty()) {
      ExecOp filter;
      filter.base_cost = cm.filter_factor * scan.rows_scanned * cm.cost_per_row * spec.baseline_scale;
      filter.rows_out = rows_out;
      top = add(OpKind::Filter, filter, pred, {top}, t.stats_staleness);
    }
    if (want_exchange && t.distributed) {
      ExecOp ex;
      ex.mult = 1.0 + cm.dk_slope * spec.severity(kRcDistributionKey) * (0.5 + t.distribution_skew);
      ex.base_cost = cm.exchange_factor * rows_out * cm.cost_per_row * spec.baseline_scale + 0.004 * spec.baseline_scale;
      ex.rows_out = rows_out;
      ex.shuffle_bytes = rows_out * t.row_width * ex.mult;
      std::string dist_col = t.has_index("region") ? "region" : "id";
      top = add(OpKind::Exchange, ex, dist_col, {top}, t.stats_staleness);
    }
    return {top, rows_out};
  }

  // Adds the redundant-subquery wrapper the query_rewrite defect introduces.
  // The wasted work re-materializes the primary table, so it scales with the
  // full scan cost rather than the chosen access path.
  int rewrite_wrapper(int child, double rows) {
    double waste = spec.rewrite_waste;
    if (waste <= 0.0) return child;
    const TableDef& t0 = db.table(spec.tables[0]);
    double full_cost = static_cast<double>(t0.row_count) * cm.cost_per_row * spec.baseline_scale;
    double total = cm.rewrite_share * full_cost * waste;
    ExecOp sub;
    sub.base_cost = 0.6 * total;
    sub.rows_out = rows;
    int top = add(OpKind::SubqueryScan, sub, "sub_a", {child}, 0.2);
    ExecOp proj;
    proj.base_cost = 0.4 * total;
    proj.rows_out = rows;
    top = add(OpKind::Project, proj, waste >= 0.6 ? "sub_b" : "", {top}, 0.2);
    return top;
  }

  int join_node(int left, double left_rows, int right, double right_rows, size_t right_slot) {
    const TableDef& rt = db.table(spec.tables[right_slot]);
    const TableDef& lt = db.table(spec.tables[0]);
    double s_jo = spec.severity(kRcJoinOrder);
    ExecOp join;
    join.base_cost = cm.join_factor * (left_rows + right_rows) * cm.cost_per_row * spec.baseline_scale;
    join.mult = m_stat() * (1.0 + cm.join_order_slope * s_jo);
    if (spec.join_count >= 2) join.mult *= 1.0 + cm.complex_join_slope * spec.severity(kRcComplexJoin);
    join.rows_out = std::max(left_rows, right_rows);
    join.mem_kb = std::min(left_rows, right_rows) * 0.5 * (lt.row_width + rt.row_width) / 1024.0;
    OpKind kind = s_jo >= 0.55 ? OpKind::NestedLoopJoin
                               : (spec.template_id % 3 == 1 ? OpKind::MergeJoin : OpKind::HashJoin);
    return add(kind, join, fk_column(lt, rt.name), {left, right}, rt.stats_staleness);
  }

  BuiltQuery build() {
    const TableDef& t0 = db.table(spec.tables[0]);
    bool want_exchange = spec.join_count >= 1 || spec.kind == TemplateKind::Agg;
    switch (spec.kind) {
      case TemplateKind::Insert: {
        double rows_ins = std::max(1.0, static_cast<double>(t0.row_count) * spec.selectivities[0]);
        ExecOp proj;
        proj.base_cost = cm.project_factor * rows_ins * cm.cost_per_row * spec.baseline_scale + 1e-4;
        proj.rows_out = rows_ins;
        int child = add(OpKind::Project, proj, "", {}, 0.0);
        ExecOp ins;
        ins.base_cost = cm.write_factor * rows_ins * cm.cost_per_row * spec.baseline_scale;
        ins.mult = (1.0 + cm.large_insert_slope * spec.severity(kRcLargeInsert)) *
                   (1.0 + cm.redundant_index_slope * spec.severity(kRcRedundantIndex));
        ins.rows_out = rows_ins;
        ins.table_index = 0;
        int root = add(OpKind::Insert, ins, t0.name, {child}, 0.0);
        (void)root;
        out.rows_returned = rows_ins;
        break;
      }
      case TemplateKind::Update: {
        auto [top, rows] = scan_chain(0, false);
        top = rewrite_wrapper(top, rows);
        double s_fu = spec.severity(kRcFullTableUpdate);
        double rows_aff = rows + s_fu * (static_cast<double>(t0.row_count) - rows);
        ExecOp upd;
        upd.base_cost = cm.write_factor * std::max(1.0, rows) * cm.cost_per_row * spec.baseline_scale;
        upd.mult = (1.0 + cm.full_update_slope * s_fu) * (1.0 + cm.redundant_index_slope * spec.severity(kRcRedundantIndex));
        upd.rows_out = rows_aff;
        upd.table_index = 0;
        add(OpKind::Update, upd, t0.name, {top}, t0.stats_staleness);
        out.rows_returned = rows_aff;
        break;
      }
      default: {  // SELECT templates
        auto [top, rows] = scan_chain(0, want_exchange);
        top = rewrite_wrapper(top, rows);
        double acc_rows = rows;
        for (int j = 1; j <= spec.join_count; ++j) {
          auto [right, right_rows] = scan_chain(static_cast<size_t>(j), want_exchange);
          top = join_node(top, acc_rows, right, right_rows, static_cast<size_t>(j));
          acc_rows = out.ops[static_cast<size_t>(top)].rows_out;
        }
        if (spec.kind == TemplateKind::Subquery) {
          const TableDef& t1 = db.table(spec.tables[1]);
          ExecOp sub;
          sub.base_cost = cm.subquery_factor * static_cast<double>(t1.row_count) * cm.cost_per_row * spec.baseline_scale;
          sub.mult = m_stat() * (1.0 + cm.repeated_subquery_slope * spec.severity(kRcRepeatedSubquery));
          sub.rows_scanned = static_cast<double>(t1.row_count);
          sub.rows_out = static_cast<double>(t1.row_count) * spec.selectivities[1];
          sub.table_index = 1;
          int inner = add(OpKind::SubqueryScan, sub, t1.name, {}, t1.stats_staleness);
          ExecOp semi;
          semi.base_cost = cm.join_factor * (acc_rows + sub.rows_out) * cm.cost_per_row * spec.baseline_scale;
          semi.mult = m_stat();
          semi.rows_out = acc_rows * 0.5;
          semi.mem_kb = sub.rows_out * t1.row_width / 1024.0;
          top = add(OpKind::NestedLoopJoin, semi, fk_column(t0, t1.name), {top, inner}, t1.stats_staleness);
          acc_rows = semi.rows_out;
        }
        if (spec.kind == TemplateKind::Agg) {
          ExecOp agg;
          agg.base_cost = cm.agg_factor * acc_rows * cm.cost_per_row * spec.baseline_scale;
          agg.mult = 1.0;
          agg.rows_out = std::max(1.0, acc_rows * 0.02);
          agg.mem_kb = acc_rows * t0.row_width * 0.3 / 1024.0;
          top = add(OpKind::Aggregate, agg, spec.group_column, {top}, t0.stats_staleness);
          acc_rows = agg.rows_out;
        }
        if (spec.order_by) {
          ExecOp sort;
          sort.base_cost = cm.sort_factor * acc_rows * cm.cost_per_row * spec.baseline_scale;
          sort.rows_out = acc_rows;
          sort.mem_kb = acc_rows * t0.row_width / 1024.0;
          top = add(OpKind::Sort, sort, spec.order_column, {top}, t0.stats_staleness);
        }
        ExecOp proj;
        proj.base_cost = cm.project_factor * acc_rows * cm.cost_per_row * spec.baseline_scale + 1e-4;
        proj.rows_out = acc_rows;
        add(OpKind::Project, proj, "", {top}, t0.stats_staleness);
        out.rows_returned = acc_rows;
        break;
      }
    }
    return std::move(out);
  }
};

}  // namespace

BuiltQuery build_query(const QuerySpec& spec, const DbState& db, const CostModel& cost) {
  if (spec.tables.empty()) raise(ErrorCode::InvalidSpec, "spec references no tables");
  if (spec.tables.size() != spec.predicate_columns.size() || spec.tables.size() != spec.selectivities.size())
    raise(ErrorCode::InvalidSpec, "spec field lengths disagree");
  for (const std::string& t : spec.tables) db.table(t);  // throws InvalidSpec on unknown
  QueryBuilder builder(spec, db, cost);
  return builder.build();
}

double simulate_runtime(const QuerySpec& spec, const DbState& db, const CostModel& cost, bool noiseless) {
  BuiltQuery built = build_query(spec, db, cost);
  double runtime = built.noiseless_runtime();
  if (!noiseless) {
    Rng rng(Rng::splitmix(spec.noise_seed) ^ 0x870aULL);
    runtime *= rng.lognormal_factor(cost.sigma_noise);
  }
  if (!(runtime > 0.0)) raise(ErrorCode::DegenerateSpec, "non-positive runtime");
  return runtime;
}

QuerySpec revise(const QuerySpec& spec, int rc_index) {
  QuerySpec out = spec;
  if (rc_index >= 0 && rc_index < static_cast<int>(out.defects.size())) out.defects[static_cast<size_t>(rc_index)] = 0.0;
  out.join_order_quality = 1.0 - out.severity(kRcJoinOrder);
  out.rewrite_waste = out.severity(kRcQueryRewrite);
  return out;
}

double impact_from_runtimes(double original_s, double revised_s) {
  if (!(original_s > 0.0)) raise(ErrorCode::DegenerateSpec, "zero runtime");
  return (original_s - revised_s) / original_s;
}

double compute_impact(const QuerySpec& spec, int rc_index, const DbState& db, const CostModel& cost) {
  double original = simulate_runtime(spec, db, cost, true);
  double revised = simulate_runtime(revise(spec, rc_index), db, cost, true);
  return impact_from_runtimes(original, revised);
}

std::vector<double> compute_impact_vector(const QuerySpec& spec, const DbState& db, const CostModel& cost, int r) {
  std::vector<double> y(static_cast<size_t>(r), 0.0);
  for (int j = 0; j < r; ++j) y[static_cast<size_t>(j)] = compute_impact(spec, j, db, cost);
  return y;
}

// ---------------------------------------------------------------------------
// SQL rendering
// ---------------------------------------------------------------------------

namespace {

std::string pick_column(const TableDef& t, Rng& rng) {
  return t.columns[static_cast<size_t>(rng.uniform_int(t.columns.size()))];
}

std::string literal(Rng& rng) { return std::to_string(1 + static_cast<int>(rng.uniform_int(9999))); }

}  // namespace

std::string render_sql(const QuerySpec& spec, const DbState& db, Rng& rng) {
  const TableDef& t0 = db.table(spec.tables[0]);
  auto pred_clause = [&](size_t k) {
    const std::string& col = spec.predicate_columns[k];
    if (col.empty()) return std::string();
    const char* cmp = spec.selectivities[k] < 0.15 ? "=" : (rng.bernoulli(0.5) ? ">" : "<");
    return col + " " + cmp + " " + literal(rng);
  };
  // The query_rewrite defect shows up as redundant nested subqueries.
  auto from_expr = [&](const std::string& table) {
    std::string expr = table;
    if (spec.rewrite_waste > 0.0) expr = "( select * from " + expr + " ) sub_a";
    if (spec.rewrite_waste >= 0.6) expr = "( select * from " + expr + " ) sub_b";
    return expr;
  };

  std::ostringstream sql;
  switch (spec.kind) {
    case TemplateKind::Insert: {
      sql << "insert into " << t0.name << " ( ";
      size_t ncols = std::min<size_t>(3, t0.columns.size());
      for (size_t i = 0; i < ncols; ++i) sql << (i ? " , " : "") << t0.columns[i];
      sql << " ) values ";
      int tuples = 1 + static_cast<int>(std::lround(5.0 * spec.severity(kRcLargeInsert)));
      for (int v = 0; v < tuples; ++v) {
        sql << (v ? " , ( " : "( ");
        for (size_t i = 0; i < ncols; ++i) sql << (i ? " , " : "") << literal(rng);
        sql << " )";
      }
      break;
    }
    case TemplateKind::Update: {
      sql << "update " << t0.name << " set " << pick_column(t0, rng) << " = " << literal(rng);
      // An intact WHERE clause disappears when the whole table is updated.
      if (spec.severity(kRcFullTableUpdate) < 0.5 && !spec.predicate_columns[0].empty())
        sql << " where " << pred_clause(0);
      break;
    }
    default: {
      std::string c1 = pick_column(t0, rng);
      std::string c2 = pick_column(t0, rng);
      if (spec.kind == TemplateKind::Agg) {
        sql << "select " << spec.group_column << " , count ( * ) from " << from_expr(t0.name);
      } else {
        sql << "select " << c1 << " , " << c2 << " from " << from_expr(t0.name);
      }
      for (int j = 1; j <= spec.join_count; ++j) {
        const TableDef& tj = db.table(spec.tables[static_cast<size_t>(j)]);
        sql << " join " << tj.name << " on " << fk_column(t0, tj.name) << " = id";
      }
      bool have_where = false;
      for (size_t k = 0; k < spec.tables.size(); ++k) {
        if (spec.kind == TemplateKind::Subquery && k == 1) continue;
        std::string clause = pred_clause(k);
        if (clause.empty()) continue;
        sql << (have_where ? " and " : " where ") << clause;
        have_where = true;
      }
      if (spec.kind == TemplateKind::Subquery) {
        const TableDef& t1 = db.table(spec.tables[1]);
        sql << (have_where ? " and " : " where ") << "id in ( select id from " << t1.name;
        std::string inner = pred_clause(1);
        if (!inner.empty()) sql << " where " << inner;
        sql << " )";
        have_where = true;
      }
      if (spec.rewrite_waste > 0.0) sql << (have_where ? " and " : " where ") << c1 << " >= 0";
      if (spec.kind == TemplateKind::Agg) sql << " group by " << spec.group_column;
      if (spec.order_by) sql << " order by " << spec.order_column;
      if (spec.template_id % 4 == 0) sql << " limit " << literal(rng);
      break;
    }
  }
  return sql.str();
}

// ---------------------------------------------------------------------------
// Workload generation
// ---------------------------------------------------------------------------

namespace {

LogVector make_log(const BuiltQuery& built, const QuerySpec& spec, const DbState& db, double noiseless_s, Rng& rng) {
  LogVector log;
  double rows_read = 0.0, bytes_scanned = 0.0, cpu_s = 0.0, mem_peak_kb = 0.0, shuffle = 0.0, write_bytes = 0.0;
  for (const ExecOp& op : built.ops) {
    if (op.rows_scanned > 0.0 && op.table_index >= 0) {
      rows_read += op.rows_scanned;
      bytes_scanned += op.rows_scanned * db.table(spec.tables[static_cast<size_t>(op.table_index)]).row_width;
    }
    switch (op.kind) {
      case OpKind::HashJoin:
      case OpKind::MergeJoin:
      case OpKind::NestedLoopJoin:
      case OpKind::Sort:
      case OpKind::Aggregate:
      case OpKind::Filter:
      case OpKind::Project:
        cpu_s += op.base_cost * op.mult;
        break;
      case OpKind::Insert:
      case OpKind::Update:
        write_bytes += op.rows_out * db.table(spec.tables[static_cast<size_t>(op.table_index)]).row_width;
        break;
      default:
        break;
    }
    mem_peak_kb = std::max(mem_peak_kb, op.mem_kb);
    shuffle += op.shuffle_bytes;
  }
  constexpr double kMemLimitKb = 262144.0;
  double spill_bytes = mem_peak_kb > kMemLimitKb ? (mem_peak_kb - kMemLimitKb) * 1024.0 : 0.0;
  log[0] = noiseless_s * 1000.0;
  log[1] = rows_read;
  log[2] = built.rows_returned;
  log[3] = bytes_scanned;
  log[4] = mem_peak_kb;
  log[5] = cpu_s * 1000.0 + 0.25 * noiseless_s * 1000.0;
  log[6] = std::ceil(bytes_scanned / 8192.0);
  log[7] = std::ceil((write_bytes + spill_bytes) / 8192.0);
  log[8] = shuffle;
  log[9] = spill_bytes;
  log[10] = rng.uniform(0.0, 40.0 * spec.baseline_scale);
  log[11] = static_cast<double>(built.nodes.size());
  log[12] = rng.bernoulli(0.02) ? 1.0 : 0.0;
  return log;
}

KpiMatrix make_kpis(const QuerySpec& spec, const DbState& db, const LogVector& log, const GenConfig& cfg, Rng& rng) {
  KpiMatrix kpi;
  kpi.q = cfg.kpi_q;
  kpi.t = cfg.kpi_t;
  kpi.values.assign(static_cast<size_t>(kpi.q) * kpi.t, 0.0);
  const TableDef& t0 = db.table(spec.tables[0]);
  double amp[6];
  amp[0] = 8.0 * (spec.baseline_scale - 1.0) +
           18.0 * (spec.severity(kRcJoinOrder) + spec.severity(kRcComplexJoin)) + 3.0 * spec.join_count;
  amp[1] = 25.0 * std::min(1.0, log[4] / 2.6e5);
  amp[2] = 90.0 * (0.5 * spec.severity(kRcStatistics) + 0.9 * spec.severity(kRcIndex));
  amp[3] = 0.6 * log[8] / 1e3 + 3e5 * spec.severity(kRcDistributionKey) * t0.distribution_skew;
  amp[4] = 6.0 * (spec.baseline_scale - 1.0) + 2.0 * spec.join_count;
  amp[5] = -(12.0 * spec.severity(kRcIndex) + 8.0 * spec.severity(kRcStatistics));
  double noise_scale = cfg.noise_sigma / 0.08;
  for (int c = 0; c < kpi.q; ++c) {
    double mean = db.kpi_base_mean[static_cast<size_t>(c)];
    double sd = db.kpi_base_std[static_cast<size_t>(c)] * noise_scale;
    bool pct = c == 0 || c == 1 || c == 5;
    for (int k = 0; k < kpi.t; ++k) {
      double ramp = static_cast<double>(k + 1) / kpi.t;  // rising toward query start
      double wave = 0.7 + 0.3 * std::sin(2.0 * std::numbers::pi * k / 20.0);
      double v = mean + amp[c] * ramp * wave + rng.normal(0.0, sd);
      if (pct) v = std::clamp(v, 0.0, 100.0);
      if (v < 0.0) v = 0.0;
      kpi.at(c, k) = v;
    }
  }
  return kpi;
}

std::vector<int> applicable_causes(const QuerySpec& spec, const DbState& db, int r) {
  std::vector<int> rcs;
  bool is_select = spec.kind != TemplateKind::Update && spec.kind != TemplateKind::Insert;
  bool has_scan = spec.kind != TemplateKind::Insert;
  if (has_scan) rcs.push_back(kRcStatistics);
  if (spec.join_count >= 1) rcs.push_back(kRcJoinOrder);
  if (has_scan && !spec.predicate_columns[0].empty()) rcs.push_back(kRcIndex);
  bool exchange = (spec.join_count >= 1 || spec.kind == TemplateKind::Agg) && db.table(spec.tables[0]).distributed;
  if (exchange) rcs.push_back(kRcDistributionKey);
  if (is_select) rcs.push_back(kRcQueryRewrite);
  if (r >= 10) {
    if (!is_select) rcs.push_back(kRcRedundantIndex);
    if (spec.kind == TemplateKind::Subquery) rcs.push_back(kRcRepeatedSubquery);
    if (spec.join_count >= 2) rcs.push_back(kRcComplexJoin);
    if (spec.kind == TemplateKind::Update) rcs.push_back(kRcFullTableUpdate);
    if (spec.kind == TemplateKind::Insert) rcs.push_back(kRcLargeInsert);
  }
  return rcs;
}

TemplateKind draw_template(Rng& rng, bool slow, int r) {
  double u = rng.uniform();
  if (!slow) {
    if (u < 0.55) return TemplateKind::Filter;
    if (u < 0.85) return TemplateKind::Join2;
    return TemplateKind::Agg;
  }
  if (r >= 10) {
    if (u < 0.22) return TemplateKind::Filter;
    if (u < 0.44) return TemplateKind::Join2;
    if (u < 0.59) return TemplateKind::Join3;
    if (u < 0.72) return TemplateKind::Agg;
    if (u < 0.82) return TemplateKind::Subquery;
    if (u < 0.92) return TemplateKind::Update;
    return TemplateKind::Insert;
  }
  if (u < 0.28) return TemplateKind::Filter;
  if (u < 0.55) return TemplateKind::Join2;
  if (u < 0.73) return TemplateKind::Join3;
  if (u < 0.90) return TemplateKind::Agg;
  return TemplateKind::Subquery;
}

std::vector<int> big_tables(const DbState& db, bool need_distributed) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(db.tables.size()); ++i) {
    const TableDef& t = db.tables[static_cast<size_t>(i)];
    if (t.row_count >= 1000000 && (!need_distributed || t.distributed)) out.push_back(i);
  }
  return out;
}

std::vector<int> small_tables(const DbState& db) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(db.tables.size()); ++i)
    if (db.tables[static_cast<size_t>(i)].row_count < 1000000) out.push_back(i);
  return out;
}

std::string non_indexed_column(const TableDef& t, Rng& rng) {
  std::vector<std::string> candidates;
  for (const std::string& c : t.columns)
    if (!t.has_index(c)) candidates.push_back(c);
  if (candidates.empty()) return t.columns.back();
  return candidates[static_cast<size_t>(rng.uniform_int(candidates.size()))];
}

std::string indexed_or_first_column(const TableDef& t, Rng& rng) {
  if (!t.indexed_columns.empty() && rng.bernoulli(0.7))
    return t.indexed_columns[static_cast<size_t>(rng.uniform_int(t.indexed_columns.size()))];
  return t.columns[static_cast<size_t>(rng.uniform_int(t.columns.size()))];
}

QuerySpec draw_spec(Rng& rng, const DbState& db, const GenConfig& cfg, bool slow, int record_index) {
  QuerySpec spec;
  spec.noise_seed = rng.next_u64();
  spec.template_id = record_index;
  spec.kind = draw_template(rng, slow, cfg.catalog_size);
  spec.defects.assign(static_cast<size_t>(cfg.catalog_size), 0.0);

  int n_tables = 1;
  switch (spec.kind) {
    case TemplateKind::Join2: n_tables = 2; break;
    case TemplateKind::Join3: n_tables = 3; break;
    case TemplateKind::Subquery: n_tables = 2; break;
    case TemplateKind::Agg: n_tables = rng.bernoulli(0.5) ? 2 : 1; break;
    default: n_tables = 1; break;
  }
  spec.join_count = (spec.kind == TemplateKind::Join2 || spec.kind == TemplateKind::Join3 ||
                     (spec.kind == TemplateKind::Agg && n_tables == 2))
                        ? n_tables - 1
                        : 0;

  bool no_defect_slow = slow && rng.bernoulli(cfg.catalog_size >= 10 ? 0.08 : 0.05);

  // Candidate causes follow from the template shape; the distribution-key
  // defect additionally needs a distributed primary table, which constrains
  // the table choice below.
  bool want_dk = false;
  std::vector<int> planted;
  if (slow && !no_defect_slow) {
    double u = rng.uniform();
    int n_defects = u < 0.45 ? 1 : (u < 0.80 ? 2 : 3);
    bool is_select = spec.kind != TemplateKind::Update && spec.kind != TemplateKind::Insert;
    bool has_scan = spec.kind != TemplateKind::Insert;
    std::vector<int> candidates;
    if (has_scan) candidates.push_back(kRcStatistics);
    if (spec.join_count >= 1) candidates.push_back(kRcJoinOrder);
    if (has_scan) candidates.push_back(kRcIndex);
    if ((spec.join_count >= 1 || spec.kind == TemplateKind::Agg) && !big_tables(db, true).empty())
      candidates.push_back(kRcDistributionKey);
    if (is_select) candidates.push_back(kRcQueryRewrite);
    if (cfg.catalog_size >= 10) {
      if (!is_select) candidates.push_back(kRcRedundantIndex);
      if (spec.kind == TemplateKind::Subquery) candidates.push_back(kRcRepeatedSubquery);
      if (spec.join_count >= 2) candidates.push_back(kRcComplexJoin);
      if (spec.kind == TemplateKind::Update) candidates.push_back(kRcFullTableUpdate);
      if (spec.kind == TemplateKind::Insert) candidates.push_back(kRcLargeInsert);
    }
    rng.shuffle(candidates);
    for (int rc : candidates) {
      if (static_cast<int>(planted.size()) >= n_defects) break;
      planted.push_back(rc);
    }
    want_dk = std::find(planted.begin(), planted.end(), kRcDistributionKey) != planted.end();
  }

  std::vector<int> primary_pool = slow ? big_tables(db, want_dk) : small_tables(db);
  if (primary_pool.empty()) primary_pool = slow ? big_tables(db, false) : small_tables(db);
  spec.tables.push_back(db.tables[static_cast<size_t>(primary_pool[rng.uniform_int(primary_pool.size())])].name);
  for (int k = 1; k < n_tables; ++k) {
    bool force_big = spec.kind == TemplateKind::Subquery && k == 1 && slow;  // the inner scan repeats
    std::vector<int> pool =
        force_big || (slow && rng.bernoulli(0.4)) ? big_tables(db, false) : small_tables(db);
    int choice;
    do {
      choice = pool[static_cast<size_t>(rng.uniform_int(pool.size()))];
    } while (db.tables[static_cast<size_t>(choice)].name == spec.tables[0] && pool.size() > 1);
    spec.tables.push_back(db.tables[static_cast<size_t>(choice)].name);
  }

  bool plant_index = std::find(planted.begin(), planted.end(), kRcIndex) != planted.end();
  const TableDef& t0 = db.table(spec.tables[0]);
  spec.predicate_columns.resize(spec.tables.size());
  spec.selectivities.resize(spec.tables.size());
  for (size_t k = 0; k < spec.tables.size(); ++k) {
    const TableDef& t = db.table(spec.tables[k]);
    if (k == 0) {
      if (spec.kind == TemplateKind::Insert) {
        spec.predicate_columns[k] = "";
      } else if (no_defect_slow && spec.kind != TemplateKind::Update && rng.bernoulli(0.6)) {
        spec.predicate_columns[k] = "";  // legitimately heavy full read
      } else {
        spec.predicate_columns[k] = plant_index ? non_indexed_column(t, rng) : indexed_or_first_column(t, rng);
      }
    } else {
      spec.predicate_columns[k] = rng.bernoulli(0.6) ? indexed_or_first_column(t, rng) : "";
    }
    spec.selectivities[k] = slow ? rng.uniform(0.08, 0.5) : rng.uniform(0.01, 0.2);
  }
  if (spec.kind == TemplateKind::Insert) spec.selectivities[0] = rng.uniform(0.05, 0.4);

  spec.order_by = spec.kind != TemplateKind::Update && spec.kind != TemplateKind::Insert && rng.bernoulli(0.3);
  spec.order_column = spec.order_by ? pick_column(t0, rng) : "";
  spec.group_column = spec.kind == TemplateKind::Agg ? pick_column(t0, rng) : "";

  // Applicability now that the real structure is known.
  std::vector<int> valid = applicable_causes(spec, db, cfg.catalog_size);
  spec.baseline_scale = !slow ? 1.0 : (no_defect_slow ? rng.uniform(2.4, 3.4) : rng.uniform(1.15, 2.0));
  for (int rc : planted) {
    if (std::find(valid.begin(), valid.end(), rc) == valid.end()) continue;
    spec.defects[static_cast<size_t>(rc)] = rng.uniform(0.35, 0.95);
  }
  spec.join_order_quality = 1.0 - spec.severity(kRcJoinOrder);
  spec.rewrite_waste = spec.severity(kRcQueryRewrite);
  return spec;
}

bool label_constraints_ok(const std::vector<double>& y, const GenConfig& cfg) {
  double top1 = -1e9, top2 = -1e9;
  for (double v : y) {
    if (std::abs(v - cfg.epsilon) < cfg.eta) return false;
    if (v > top1) {
      top2 = top1;
      top1 = v;
    } else if (v > top2) {
      top2 = v;
    }
  }
  if (top1 >= cfg.epsilon && y.size() > 1 && top1 - top2 < cfg.top_gap) return false;
  return true;
}

}  // namespace

GeneratedWorkload generate_workload(const GenConfig& cfg, uint64_t seed) {
  if (cfg.labeled_target > cfg.total) raise(ErrorCode::InvalidConfig, "labeled count exceeds total");
  if (cfg.total <= 0) raise(ErrorCode::InvalidConfig, "total must be positive");
  if (cfg.kpi_q != 6) raise(ErrorCode::InvalidConfig, "generator renders exactly 6 KPI channels");
  RootCauseCatalog catalog = RootCauseCatalog::of_size(cfg.catalog_size);

  GeneratedWorkload wl;
  wl.db = make_db_state(seed);
  wl.cost = CostModel{};
  wl.cost.sigma_noise = cfg.noise_sigma;

  // Exactly labeled_target slow-intent records, spread by a seeded shuffle.
  std::vector<int> order(static_cast<size_t>(cfg.total));
  for (int i = 0; i < cfg.total; ++i) order[static_cast<size_t>(i)] = i;
  Rng intent_rng(Rng::splitmix(seed) ^ 0x51e7ULL);
  intent_rng.shuffle(order);
  std::vector<uint8_t> slow_intent(static_cast<size_t>(cfg.total), 0);
  for (int i = 0; i < cfg.labeled_target; ++i) slow_intent[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;

  wl.dataset.root_cause_catalog = catalog.names;
  wl.dataset.kpi_q = cfg.kpi_q;
  wl.dataset.kpi_t = cfg.kpi_t;

  for (int i = 0; i < cfg.total; ++i) {
    bool slow = slow_intent[static_cast<size_t>(i)] != 0;
    Rng rec_rng(seed, static_cast<uint64_t>(i) + 101);
    QuerySpec spec;
    double noiseless = 0.0, noisy = 0.0;
    std::vector<double> impacts;
    bool ok = false;
    for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
      spec = draw_spec(rec_rng, wl.db, cfg, slow, i);
      noiseless = simulate_runtime(spec, wl.db, wl.cost, true);
      noisy = simulate_runtime(spec, wl.db, wl.cost, false);
      if (slow) {
        if (noiseless <= cfg.delta || noisy <= cfg.delta || noiseless > 60.0) continue;
        impacts = compute_impact_vector(spec, wl.db, wl.cost, catalog.size());
        if (!label_constraints_ok(impacts, cfg)) continue;
      } else {
        if (noiseless > cfg.delta || noisy > cfg.delta) continue;
      }
      ok = true;
    }
    if (!ok) raise(ErrorCode::Internal, "generator failed to satisfy constraints at record " + std::to_string(i));

    BuiltQuery built = build_query(spec, wl.db, wl.cost);
    QueryRecord rec;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "q%06d", i);
    rec.id = idbuf;
    Rng sql_rng(Rng::splitmix(spec.noise_seed) ^ 0x5a1fULL);
    rec.sql_text = render_sql(spec, wl.db, sql_rng);
    rec.sql = tokenize_sql(rec.sql_text, Vocabulary::builtin());
    rec.plan = PlanDag::from_parts(built.nodes, built.edges);
    Rng render_rng(Rng::splitmix(spec.noise_seed) ^ 0x10f5ULL);
    rec.log_raw = make_log(built, spec, wl.db, noiseless, render_rng);
    rec.kpis = make_kpis(spec, wl.db, rec.log_raw, cfg, render_rng);
    rec.runtime_s = noisy;
    if (slow) rec.impacts = impacts;
    wl.dataset.records.push_back(std::move(rec));
    wl.specs.push_back(std::move(spec));
  }

  // Split tags: labeled slow queries by the configured ratios, everything
  // else into the pretraining pool.
  std::vector<int> labeled;
  for (int i = 0; i < cfg.total; ++i)
    if (wl.dataset.records[static_cast<size_t>(i)].labeled()) labeled.push_back(i);
  Rng split_rng(Rng::splitmix(seed) ^ 0x5917ULL);
  split_rng.shuffle(labeled);
  size_t n = labeled.size();
  size_t n_train = static_cast<size_t>(std::floor(static_cast<double>(n) * cfg.split_ratios[0]));
  size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * cfg.split_ratios[1]));
  for (size_t k = 0; k < n; ++k) {
    const char* tag = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
    wl.dataset.records[static_cast<size_t>(labeled[k])].split = tag;
  }
  compute_norm_stats(wl.dataset);
  return wl;
}

// ---------------------------------------------------------------------------
// Specs sidecar
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const QuerySpec& s) {
  json j;
  j["template_id"] = s.template_id;
  j["kind"] = static_cast<int>(s.kind);
  j["tables"] = s.tables;
  j["join_count"] = s.join_count;
  j["predicate_columns"] = s.predicate_columns;
  j["selectivities"] = s.selectivities;
  j["defects"] = s.defects;
  j["join_order_quality"] = s.join_order_quality;
  j["rewrite_waste"] = s.rewrite_waste;
  j["baseline_scale"] = s.baseline_scale;
  j["order_by"] = s.order_by;
  j["order_column"] = s.order_column;
  j["group_column"] = s.group_column;
  j["noise_seed"] = s.noise_seed;
  return j;
}

QuerySpec spec_from_json(const json& j) {
  QuerySpec s;
  s.template_id = j.at("template_id").get<int>();
  s.kind = static_cast<TemplateKind>(j.at("kind").get<int>());
  s.tables = j.at("tables").get<std::vector<std::string>>();
  s.join_count = j.at("join_count").get<int>();
  s.predicate_columns = j.at("predicate_columns").get<std::vector<std::string>>();
  s.selectivities = j.at("selectivities").get<std::vector<double>>();
  s.defects = j.at("defects").get<std::vector<double>>();
  s.join_order_quality = j.at("join_order_quality").get<double>();
  s.rewrite_waste = j.at("rewrite_waste").get<double>();
  s.baseline_scale = j.at("baseline_scale").get<double>();
  s.order_by = j.at("order_by").get<bool>();
  s.order_column = j.at("order_column").get<std::string>();
  s.group_column = j.at("group_column").get<std::string>();
  s.noise_seed = j.at("noise_seed").get<uint64_t>();
  return s;
}

json table_to_json(const TableDef& t) {
  json j;
  j["name"] = t.name;
  j["row_count"] = t.row_count;
  j["columns"] = t.columns;
  j["indexed_columns"] = t.indexed_columns;
  j["stats_staleness"] = t.stats_staleness;
  j["distribution_skew"] = t.distribution_skew;
  j["distributed"] = t.distributed;
  j["row_width"] = t.row_width;
  return j;
}

TableDef table_from_json(const json& j) {
  TableDef t;
  t.name = j.at("name").get<std::string>();
  t.row_count = j.at("row_count").get<int64_t>();
  t.columns = j.at("columns").get<std::vector<std::string>>();
  t.indexed_columns = j.at("indexed_columns").get<std::vector<std::string>>();
  t.stats_staleness = j.at("stats_staleness").get<double>();
  t.distribution_skew = j.at("distribution_skew").get<double>();
  t.distributed = j.at("distributed").get<bool>();
  t.row_width = j.at("row_width").get<double>();
  return t;
}

}  // namespace

void save_specs(const GeneratedWorkload& wl, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  json header;
  json tables = json::array();
  for (const TableDef& t : wl.db.tables) tables.push_back(table_to_json(t));
  header["db"] = {{"tables", tables},
                  {"kpi_base_mean", wl.db.kpi_base_mean},
                  {"kpi_base_std", wl.db.kpi_base_std},
                  {"seed", wl.db.seed}};
  header["cost"] = {{"cost_per_row", wl.cost.cost_per_row}, {"sigma_noise", wl.cost.sigma_noise}};
  os << header.dump() << '\n';
  for (size_t i = 0; i < wl.specs.size(); ++i) {
    json j = spec_to_json(wl.specs[i]);
    j["id"] = wl.dataset.records[i].id;
    os << j.dump() << '\n';
  }
  if (!os) raise(ErrorCode::Internal, "write failed: " + path);
}

SpecsFile load_specs(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCode::MissingFile, "cannot open specs: " + path);
  SpecsFile out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      raise(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      for (const json& tj : j.at("db").at("tables")) out.db.tables.push_back(table_from_json(tj));
      auto mean = j.at("db").at("kpi_base_mean").get<std::vector<double>>();
      auto std_ = j.at("db").at("kpi_base_std").get<std::vector<double>>();
      std::copy(mean.begin(), mean.end(), out.db.kpi_base_mean.begin());
      std::copy(std_.begin(), std_.end(), out.db.kpi_base_std.begin());
      out.db.seed = j.at("db").at("seed").get<uint64_t>();
      out.cost = CostModel{};
      out.cost.cost_per_row = j.at("cost").at("cost_per_row").get<double>();
      out.cost.sigma_noise = j.at("cost").at("sigma_noise").get<double>();
      continue;
    }
    out.by_id.emplace(j.at("id").get<std::string>(), spec_from_json(j));
  }
  if (line_no == 0) raise(ErrorCode::SchemaError, "specs file is empty");
  return out;
}

}  // namespace rcrank
