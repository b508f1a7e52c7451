#pragma once

#include <map>
#include <string>

#include "rcrank/harness.hpp"

namespace rcrank {

// Flat key-value run configuration: `key = value` lines, '#' comments.
// Unknown keys are rejected; the fully resolved set is echoed next to every
// command's outputs so a run can be reproduced exactly.
class RunConfig {
 public:
  RunConfig();
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);  // InvalidConfig on unknown key
  bool has(const std::string& key) const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;

  void echo(const std::string& path) const;

  GenConfig gen_config() const;
  ModelConfig model_config(const Dataset& ds) const;
  TrainConfig train_config() const;
  PretrainConfig pretrain_config() const;
  PipelineConfig pipeline_config(const Dataset& ds) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rcrank
