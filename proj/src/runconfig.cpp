#include "rcrank/runconfig.hpp"

#include <algorithm>
#include <fstream>

namespace rcrank {

namespace {

// Every recognized key with its default value.
const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"gen.total", "12000"},
      {"gen.labeled", "2000"},
      {"gen.catalog", "5"},
      {"gen.delta", "1.0"},
      {"gen.epsilon", "0.10"},
      {"gen.eta", "0.02"},
      {"gen.top_gap", "0.02"},
      {"gen.noise_sigma", "0.08"},
      {"gen.kpi_t", "60"},
      {"gen.split_train", "0.8"},
      {"gen.split_val", "0.1"},
      {"gen.split_test", "0.1"},
      {"model.d", "32"},
      {"model.dropout", "0.1"},
      {"model.fusion_blocks", "3"},
      {"model.sql_layers", "2"},
      {"model.sql_heads", "4"},
      {"model.plan_layers", "2"},
      {"model.plan_heads", "4"},
      {"model.plan_struct_bias", "true"},
      {"model.kpi_c1", "4"},
      {"model.kpi_c2", "8"},
      {"model.max_sql_len", "128"},
      {"model.main_modality", "sql"},
      {"model.share_adaptive", "true"},
      {"model.per_rc_heads", "false"},
      {"model.gates_enabled", "true"},
      {"model.fusion", "cross_modal"},
      {"train.batch", "64"},
      {"train.epochs", "50"},
      {"train.lr", "0.0003"},
      {"train.lambda", "7.0"},
      {"train.epsilon", "0.10"},
      {"train.eta", "0.02"},
      {"train.seed", "0"},
      {"train.order_independent_sort", "false"},
      {"pretrain.epochs", "5"},
      {"pretrain.batch", "64"},
      {"pretrain.lr", "0.0003"},
      {"pretrain.mask_frac", "0.15"},
      {"pretrain.mask_all", "false"},
      {"threads", "0"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCode::MissingFile, "cannot open config: " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      raise(ErrorCode::InvalidConfig, path + ":" + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!default_values().count(key)) raise(ErrorCode::InvalidConfig, "unknown config key: " + key);
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

int RunConfig::get_int(const std::string& key) const {
  try {
    return std::stoi(get_string(key));
  } catch (const std::exception&) {
    raise(ErrorCode::InvalidConfig, "key " + key + " is not an integer");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get_string(key));
  } catch (const std::exception&) {
    raise(ErrorCode::InvalidConfig, "key " + key + " is not a number");
  }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    return std::stoull(get_string(key));
  } catch (const std::exception&) {
    raise(ErrorCode::InvalidConfig, "key " + key + " is not an unsigned integer");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get_string(key);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  raise(ErrorCode::InvalidConfig, "key " + key + " is not a boolean");
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) raise(ErrorCode::InvalidConfig, "unknown config key: " + key);
  return it->second;
}

void RunConfig::echo(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
}

GenConfig RunConfig::gen_config() const {
  GenConfig g;
  g.total = get_int("gen.total");
  g.labeled_target = get_int("gen.labeled");
  g.catalog_size = get_int("gen.catalog");
  g.delta = get_double("gen.delta");
  g.epsilon = get_double("gen.epsilon");
  g.eta = get_double("gen.eta");
  g.top_gap = get_double("gen.top_gap");
  g.noise_sigma = get_double("gen.noise_sigma");
  g.kpi_t = get_int("gen.kpi_t");
  g.split_ratios = {get_double("gen.split_train"), get_double("gen.split_val"), get_double("gen.split_test")};
  return g;
}

ModelConfig RunConfig::model_config(const Dataset& ds) const {
  ModelConfig m;
  m.enc.d = get_int("model.d");
  m.enc.dropout = get_double("model.dropout");
  m.enc.sql_layers = get_int("model.sql_layers");
  m.enc.sql_heads = get_int("model.sql_heads");
  m.enc.plan_layers = get_int("model.plan_layers");
  m.enc.plan_heads = get_int("model.plan_heads");
  m.enc.plan_struct_bias = get_bool("model.plan_struct_bias");
  m.enc.kpi_c1 = get_int("model.kpi_c1");
  m.enc.kpi_c2 = get_int("model.kpi_c2");
  m.enc.max_sql_len = get_int("model.max_sql_len");
  m.enc.kpi_q = ds.kpi_q;
  m.enc.kpi_t = ds.kpi_t;
  m.fusion_blocks = get_int("model.fusion_blocks");
  m.main_modality = modality_from_name(get_string("model.main_modality"));
  m.share_adaptive = get_bool("model.share_adaptive");
  m.per_rc_heads = get_bool("model.per_rc_heads");
  m.gates_enabled = get_bool("model.gates_enabled");
  m.fusion = fusion_mode_from_name(get_string("model.fusion"));
  m.r = ds.r();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.batch = get_int("train.batch");
  t.epochs = get_int("train.epochs");
  t.lr = get_double("train.lr");
  t.lambda = get_double("train.lambda");
  t.epsilon = get_double("train.epsilon");
  t.eta = get_double("train.eta");
  t.seed = get_u64("train.seed");
  t.dropout = get_double("model.dropout");
  t.threads = get_int("threads");
  t.order_loss_independent_sort = get_bool("train.order_independent_sort");
  return t;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p;
  p.epochs = get_int("pretrain.epochs");
  p.batch = get_int("pretrain.batch");
  p.lr = get_double("pretrain.lr");
  p.mask_frac = get_double("pretrain.mask_frac");
  p.mask_all_modalities = get_bool("pretrain.mask_all");
  p.seed = get_u64("train.seed");
  p.threads = get_int("threads");
  return p;
}

PipelineConfig RunConfig::pipeline_config(const Dataset& ds) const {
  PipelineConfig cfg;
  cfg.model = model_config(ds);
  cfg.train = train_config();
  cfg.pretrain = pretrain_config();
  return cfg;
}

}  // namespace rcrank
