#include "rcrank/domain.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <sstream>

#include "rcrank/rng.hpp"

namespace rcrank {

namespace {

const char* kOpNames[kOpKindCount] = {"Scan",      "IndexScan", "Filter", "HashJoin", "NestedLoopJoin",
                                      "MergeJoin", "Sort",      "Aggregate", "Project", "Exchange",
                                      "Insert",    "Update",    "SubqueryScan"};

}  // namespace

const char* op_kind_name(OpKind k) { return kOpNames[static_cast<int>(k)]; }

OpKind op_kind_from_name(const std::string& name) {
  for (int i = 0; i < kOpKindCount; ++i)
    if (name == kOpNames[i]) return static_cast<OpKind>(i);
  raise(ErrorCode::InvalidPlan, "unknown operator kind: " + name);
}

PlanDag PlanDag::from_parts(std::vector<PlanNode> nodes, std::vector<std::pair<int, int>> edges) {
  if (nodes.empty()) raise(ErrorCode::InvalidPlan, "plan has no nodes");
  const int n = static_cast<int>(nodes.size());
  for (const PlanNode& node : nodes) {
    if (!std::isfinite(node.est_rows) || node.est_rows < 0.0 || !std::isfinite(node.est_cost) || node.est_cost < 0.0)
      raise(ErrorCode::InvalidPlan, "est_rows/est_cost must be finite and >= 0");
  }
  std::vector<int> out_degree(nodes.size(), 0);
  std::vector<std::vector<int>> children(nodes.size());
  for (auto [from, to] : edges) {
    if (from < 0 || from >= n || to < 0 || to >= n)
      raise(ErrorCode::InvalidPlan, "edge endpoint out of range: " + std::to_string(from) + "->" + std::to_string(to));
    out_degree[static_cast<size_t>(from)]++;
    children[static_cast<size_t>(to)].push_back(from);
  }
  // Roots: nodes with no outgoing edge.
  int root = -1, roots = 0;
  for (int i = 0; i < n; ++i) {
    if (out_degree[static_cast<size_t>(i)] == 0) {
      root = i;
      ++roots;
    }
  }
  if (roots != 1) raise(ErrorCode::InvalidPlan, "plan must have exactly one root, found " + std::to_string(roots));
  // Kahn topological sort along child->parent edges; children come first.
  std::vector<int> remaining(nodes.size(), 0);
  for (size_t i = 0; i < nodes.size(); ++i) remaining[i] = static_cast<int>(children[i].size());
  std::deque<int> ready;
  for (int i = 0; i < n; ++i)
    if (remaining[static_cast<size_t>(i)] == 0) ready.push_back(i);
  std::vector<std::vector<int>> parents(nodes.size());
  for (auto [from, to] : edges) parents[static_cast<size_t>(from)].push_back(to);
  std::vector<int> topo;
  topo.reserve(nodes.size());
  while (!ready.empty()) {
    int cur = ready.front();
    ready.pop_front();
    topo.push_back(cur);
    for (int p : parents[static_cast<size_t>(cur)]) {
      if (--remaining[static_cast<size_t>(p)] == 0) ready.push_back(p);
    }
  }
  if (topo.size() != nodes.size()) raise(ErrorCode::InvalidPlan, "cycle detected in plan");
  PlanDag dag;
  dag.nodes_ = std::move(nodes);
  dag.edges_ = std::move(edges);
  dag.children_ = std::move(children);
  dag.topo_ = std::move(topo);
  dag.root_ = root;
  return dag;
}

std::vector<std::vector<int>> PlanDag::undirected_distances(int cap) const {
  const int n = node_count();
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (auto [from, to] : edges_) {
    adj[static_cast<size_t>(from)].push_back(to);
    adj[static_cast<size_t>(to)].push_back(from);
  }
  std::vector<std::vector<int>> dist(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n), cap));
  for (int s = 0; s < n; ++s) {
    auto& row = dist[static_cast<size_t>(s)];
    row[static_cast<size_t>(s)] = 0;
    std::deque<int> q{s};
    while (!q.empty()) {
      int cur = q.front();
      q.pop_front();
      int dcur = row[static_cast<size_t>(cur)];
      if (dcur >= cap) continue;
      for (int nb : adj[static_cast<size_t>(cur)]) {
        if (row[static_cast<size_t>(nb)] > dcur + 1) {
          row[static_cast<size_t>(nb)] = std::min(cap, dcur + 1);
          q.push_back(nb);
        }
      }
    }
  }
  return dist;
}

namespace {

double require_number(const json& j, const std::string& key, ErrorCode code) {
  if (!j.contains(key) || !j[key].is_number())
    raise(code, "missing or non-numeric field '" + key + "'");
  return j[key].get<double>();
}

void parse_nested_node(const json& j, std::vector<PlanNode>& nodes, std::vector<std::pair<int, int>>& edges,
                       int parent, int depth) {
  if (depth > 512) raise(ErrorCode::InvalidPlan, "plan nesting too deep");
  if (!j.is_object() || !j.contains("op")) raise(ErrorCode::InvalidPlan, "plan node must be an object with 'op'");
  PlanNode node;
  node.op = op_kind_from_name(j["op"].get<std::string>());
  node.est_rows = require_number(j, "est_rows", ErrorCode::InvalidPlan);
  node.est_cost = require_number(j, "est_cost", ErrorCode::InvalidPlan);
  if (j.contains("label")) node.label = j["label"].get<std::string>();
  int index = static_cast<int>(nodes.size());
  nodes.push_back(std::move(node));
  if (parent >= 0) edges.emplace_back(index, parent);
  if (j.contains("children")) {
    if (!j["children"].is_array()) raise(ErrorCode::InvalidPlan, "'children' must be an array");
    for (const json& c : j["children"]) parse_nested_node(c, nodes, edges, index, depth + 1);
  }
}

}  // namespace

PlanDag parse_plan(const json& plan_json) {
  if (!plan_json.is_object()) raise(ErrorCode::InvalidPlan, "plan must be a JSON object");
  std::vector<PlanNode> nodes;
  std::vector<std::pair<int, int>> edges;
  if (plan_json.contains("nodes")) {
    if (!plan_json["nodes"].is_array()) raise(ErrorCode::InvalidPlan, "'nodes' must be an array");
    for (const json& nj : plan_json["nodes"]) {
      PlanNode node;
      node.op = op_kind_from_name(nj.at("op").get<std::string>());
      node.est_rows = require_number(nj, "est_rows", ErrorCode::InvalidPlan);
      node.est_cost = require_number(nj, "est_cost", ErrorCode::InvalidPlan);
      if (nj.contains("label")) node.label = nj["label"].get<std::string>();
      nodes.push_back(std::move(node));
    }
    if (plan_json.contains("edges")) {
      for (const json& ej : plan_json["edges"]) {
        if (!ej.is_array() || ej.size() != 2) raise(ErrorCode::InvalidPlan, "edge must be [from, to]");
        edges.emplace_back(ej[0].get<int>(), ej[1].get<int>());
      }
    }
  } else {
    parse_nested_node(plan_json, nodes, edges, -1, 0);
  }
  return PlanDag::from_parts(std::move(nodes), std::move(edges));
}

json plan_to_json(const PlanDag& dag) {
  // Nested form when the plan is a tree (every node feeds at most one parent).
  std::vector<int> out_degree(static_cast<size_t>(dag.node_count()), 0);
  for (auto [from, to] : dag.edges()) {
    (void)to;
    out_degree[static_cast<size_t>(from)]++;
  }
  bool tree = std::all_of(out_degree.begin(), out_degree.end(), [](int d) { return d <= 1; });
  if (tree) {
    std::function<json(int)> emit = [&](int i) {
      const PlanNode& node = dag.node(i);
      json j;
      j["op"] = op_kind_name(node.op);
      j["est_rows"] = node.est_rows;
      j["est_cost"] = node.est_cost;
      if (!node.label.empty()) j["label"] = node.label;
      if (!dag.children(i).empty()) {
        json kids = json::array();
        std::vector<int> order = dag.children(i);
        std::sort(order.begin(), order.end());
        for (int c : order) kids.push_back(emit(c));
        j["children"] = kids;
      }
      return j;
    };
    return emit(dag.root());
  }
  json j;
  json nodes = json::array();
  for (const PlanNode& node : dag.nodes()) {
    json nj;
    nj["op"] = op_kind_name(node.op);
    nj["est_rows"] = node.est_rows;
    nj["est_cost"] = node.est_cost;
    if (!node.label.empty()) nj["label"] = node.label;
    nodes.push_back(nj);
  }
  j["nodes"] = nodes;
  json edges = json::array();
  for (auto [from, to] : dag.edges()) edges.push_back(json::array({from, to}));
  j["edges"] = edges;
  return j;
}

const std::array<std::string, kLogFieldCount>& log_field_names() {
  static const std::array<std::string, kLogFieldCount> names = {
      "duration_ms", "rows_read",   "rows_returned", "bytes_scanned", "memory_peak_kb", "cpu_ms",    "io_reads",
      "io_writes",   "shuffle_bytes", "spill_bytes",  "queue_wait_ms", "plan_node_count", "retries"};
  return names;
}

int log_field_index(const std::string& name) {
  const auto& names = log_field_names();
  for (int i = 0; i < kLogFieldCount; ++i)
    if (names[static_cast<size_t>(i)] == name) return i;
  return -1;
}

std::vector<std::string> kpi_channel_names(int q) {
  static const std::vector<std::string> base = {"cpu_pct",   "mem_pct",            "io_count",
                                                "net_bytes", "active_connections", "cache_hit_pct"};
  if (q == static_cast<int>(base.size())) return base;
  std::vector<std::string> names;
  for (int i = 0; i < q; ++i)
    names.push_back(i < static_cast<int>(base.size()) ? base[static_cast<size_t>(i)] : "ch" + std::to_string(i));
  return names;
}

LogVector vectorize_log(const std::map<std::string, double>& raw, const NormStats& norm) {
  LogVector out;
  const auto& names = log_field_names();
  for (int i = 0; i < kLogFieldCount; ++i) {
    auto it = raw.find(names[static_cast<size_t>(i)]);
    if (it == raw.end()) raise(ErrorCode::MissingLogField, names[static_cast<size_t>(i)]);
    if (!std::isfinite(it->second)) raise(ErrorCode::InvalidInput, "non-finite log field " + it->first);
    double std_dev = std::max(norm.log_std[static_cast<size_t>(i)], 1e-6);
    out[i] = (it->second - norm.log_mean[static_cast<size_t>(i)]) / std_dev;
  }
  return out;
}

size_t Dataset::labeled_count() const {
  size_t n = 0;
  for (const auto& r : records) n += r.labeled() ? 1 : 0;
  return n;
}

namespace {

void validate_record(const QueryRecord& rec, int expected_r, int kpi_q, int kpi_t, int line_no) {
  auto fail = [&](const std::string& msg) {
    raise(ErrorCode::SchemaError, "record " + rec.id + " (line " + std::to_string(line_no) + "): " + msg);
  };
  if (!(rec.runtime_s > 0.0) || !std::isfinite(rec.runtime_s)) fail("runtime_s must be > 0");
  if (rec.split != "train" && rec.split != "val" && rec.split != "test" && rec.split != "pretrain")
    fail("bad split tag '" + rec.split + "'");
  if (rec.impacts) {
    if (static_cast<int>(rec.impacts->size()) != expected_r)
      fail("impacts length " + std::to_string(rec.impacts->size()) + " but catalog has " + std::to_string(expected_r));
    for (double y : *rec.impacts) {
      if (!std::isfinite(y) || y > 1.0 + 1e-12) fail("impact out of range");
    }
  }
  for (double v : rec.log_raw.v) {
    if (!std::isfinite(v) || v < 0.0) fail("log fields must be finite and >= 0");
  }
  if (rec.kpis.q != kpi_q || rec.kpis.t != kpi_t) fail("inconsistent KPI dimensions");
  auto channels = kpi_channel_names(rec.kpis.q);
  for (int c = 0; c < rec.kpis.q; ++c) {
    bool pct = channels[static_cast<size_t>(c)].ends_with("_pct");
    for (int k = 0; k < rec.kpis.t; ++k) {
      double v = rec.kpis.at(c, k);
      if (!std::isfinite(v)) fail("non-finite KPI value");
      if (pct && (v < -1e-9 || v > 100.0 + 1e-9)) fail("percentage KPI outside [0,100]");
    }
  }
}

}  // namespace

QueryRecord record_from_json(const json& j, int expected_r, int line_no) {
  QueryRecord rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.sql_text = j.at("sql").get<std::string>();
    rec.sql = tokenize_sql(rec.sql_text, Vocabulary::builtin());
    rec.plan = parse_plan(j.at("plan"));
    std::map<std::string, double> raw;
    for (auto& [k, v] : j.at("log").items()) {
      if (!v.is_number()) raise(ErrorCode::InvalidInput, "log field " + k + " not numeric");
      raw[k] = v.get<double>();
    }
    const auto& names = log_field_names();
    for (int i = 0; i < kLogFieldCount; ++i) {
      auto it = raw.find(names[static_cast<size_t>(i)]);
      if (it == raw.end()) raise(ErrorCode::MissingLogField, names[static_cast<size_t>(i)]);
      rec.log_raw[i] = it->second;
    }
    const json& kj = j.at("kpis");
    rec.kpis.q = static_cast<int>(kj.size());
    rec.kpis.t = rec.kpis.q > 0 ? static_cast<int>(kj[0].size()) : 0;
    rec.kpis.values.reserve(static_cast<size_t>(rec.kpis.q) * rec.kpis.t);
    for (const json& row : kj) {
      if (static_cast<int>(row.size()) != rec.kpis.t)
        raise(ErrorCode::SchemaError, "ragged KPI matrix");
      for (const json& v : row) rec.kpis.values.push_back(v.get<double>());
    }
    rec.runtime_s = j.at("runtime_s").get<double>();
    rec.split = j.value("split", "pretrain");
    if (j.contains("impacts")) rec.impacts = j["impacts"].get<std::vector<double>>();
  } catch (const RcError&) {
    throw;
  } catch (const std::exception& e) {
    raise(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
  }
  validate_record(rec, expected_r, rec.kpis.q, rec.kpis.t, line_no);
  return rec;
}

json record_to_json(const QueryRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["sql"] = rec.sql_text;
  j["plan"] = plan_to_json(rec.plan);
  json log;
  const auto& names = log_field_names();
  for (int i = 0; i < kLogFieldCount; ++i) log[names[static_cast<size_t>(i)]] = rec.log_raw[i];
  j["log"] = log;
  json kpis = json::array();
  for (int c = 0; c < rec.kpis.q; ++c) {
    json row = json::array();
    for (int k = 0; k < rec.kpis.t; ++k) row.push_back(rec.kpis.at(c, k));
    kpis.push_back(row);
  }
  j["kpis"] = kpis;
  j["runtime_s"] = rec.runtime_s;
  j["split"] = rec.split;
  if (rec.impacts) j["impacts"] = *rec.impacts;
  return j;
}

void compute_norm_stats(Dataset& ds) {
  // Training-split statistics only; falls back to all records when the file
  // carries no train split (pure pretraining pools).
  std::vector<const QueryRecord*> basis;
  for (const auto& r : ds.records)
    if (r.split == "train") basis.push_back(&r);
  if (basis.empty())
    for (const auto& r : ds.records) basis.push_back(&r);
  NormStats norm;
  norm.kpi_mean.assign(static_cast<size_t>(ds.kpi_q), 0.0);
  norm.kpi_std.assign(static_cast<size_t>(ds.kpi_q), 1.0);
  if (basis.empty()) {
    ds.norm = norm;
    return;
  }
  for (int i = 0; i < kLogFieldCount; ++i) {
    double mean = 0.0;
    for (const QueryRecord* r : basis) mean += r->log_raw[i];
    mean /= static_cast<double>(basis.size());
    double var = 0.0;
    for (const QueryRecord* r : basis) var += (r->log_raw[i] - mean) * (r->log_raw[i] - mean);
    var /= static_cast<double>(basis.size());
    norm.log_mean[static_cast<size_t>(i)] = mean;
    norm.log_std[static_cast<size_t>(i)] = std::sqrt(var);
  }
  for (int c = 0; c < ds.kpi_q; ++c) {
    double mean = 0.0;
    int64_t count = 0;
    for (const QueryRecord* r : basis) {
      for (int k = 0; k < ds.kpi_t; ++k) mean += r->kpis.at(c, k);
      count += ds.kpi_t;
    }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (const QueryRecord* r : basis)
      for (int k = 0; k < ds.kpi_t; ++k) var += (r->kpis.at(c, k) - mean) * (r->kpis.at(c, k) - mean);
    var /= static_cast<double>(count);
    norm.kpi_mean[static_cast<size_t>(c)] = mean;
    norm.kpi_std[static_cast<size_t>(c)] = std::sqrt(var);
  }
  ds.norm = norm;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCode::MissingFile, "cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      raise(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      if (!j.contains("catalog")) raise(ErrorCode::SchemaError, "first line must carry the root-cause catalog");
      ds.root_cause_catalog = j["catalog"].get<std::vector<std::string>>();
      have_header = true;
      continue;
    }
    QueryRecord rec = record_from_json(j, ds.r(), line_no);
    if (ds.records.empty()) {
      ds.kpi_q = rec.kpis.q;
      ds.kpi_t = rec.kpis.t;
    } else if (rec.kpis.q != ds.kpi_q || rec.kpis.t != ds.kpi_t) {
      raise(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": KPI dimensions differ from dataset");
    }
    ds.records.push_back(std::move(rec));
  }
  if (!have_header) raise(ErrorCode::SchemaError, "dataset file is empty");
  compute_norm_stats(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  json header;
  header["catalog"] = ds.root_cause_catalog;
  os << header.dump() << '\n';
  for (const QueryRecord& rec : ds.records) os << record_to_json(rec).dump() << '\n';
  if (!os) raise(ErrorCode::Internal, "write failed: " + path);
}

std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& ds, std::array<double, 3> ratios, uint64_t seed) {
  for (double r : ratios)
    if (!(r > 0.0)) raise(ErrorCode::InvalidConfig, "split ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    raise(ErrorCode::InvalidConfig, "split ratios must sum to 1");
  std::vector<int> labeled;
  std::vector<int> unlabeled;
  for (int i = 0; i < static_cast<int>(ds.records.size()); ++i)
    (ds.records[static_cast<size_t>(i)].labeled() ? labeled : unlabeled).push_back(i);
  if (labeled.size() < 3) raise(ErrorCode::InsufficientData, "need at least 3 labeled records to split");
  Rng rng(seed);
  rng.shuffle(labeled);
  size_t n = labeled.size();
  size_t n_train = static_cast<size_t>(std::floor(static_cast<double>(n) * ratios[0]));
  size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * ratios[1]));
  Dataset train, val, test;
  for (Dataset* d : {&train, &val, &test}) {
    d->root_cause_catalog = ds.root_cause_catalog;
    d->kpi_q = ds.kpi_q;
    d->kpi_t = ds.kpi_t;
  }
  auto push = [&](Dataset& d, int idx, const char* tag) {
    QueryRecord rec = ds.records[static_cast<size_t>(idx)];
    rec.split = tag;
    d.records.push_back(std::move(rec));
  };
  for (size_t i = 0; i < n; ++i) {
    if (i < n_train)
      push(train, labeled[i], "train");
    else if (i < n_train + n_val)
      push(val, labeled[i], "val");
    else
      push(test, labeled[i], "test");
  }
  for (int idx : unlabeled) push(train, idx, "pretrain");
  compute_norm_stats(train);
  val.norm = train.norm;  // no leakage: all three share training statistics
  test.norm = train.norm;
  return {std::move(train), std::move(val), std::move(test)};
}

std::tuple<Dataset, Dataset, Dataset> partition_by_tags(const Dataset& ds) {
  Dataset train, val, test;
  for (Dataset* d : {&train, &val, &test}) {
    d->root_cause_catalog = ds.root_cause_catalog;
    d->kpi_q = ds.kpi_q;
    d->kpi_t = ds.kpi_t;
    d->norm = ds.norm;
  }
  for (const QueryRecord& rec : ds.records) {
    if (rec.split == "val")
      val.records.push_back(rec);
    else if (rec.split == "test")
      test.records.push_back(rec);
    else
      train.records.push_back(rec);  // train + pretraining pool
  }
  return {std::move(train), std::move(val), std::move(test)};
}

}  // namespace rcrank
