#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rcrank/rng.hpp"
#include "rcrank/tensor.hpp"

namespace rcrank {

// A trainable tensor plus its Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor m, v;       // first/second moments, allocated at first update
  int64_t step = 0;  // update count
  int index = -1;    // slot in the owning store (name order)
};

enum class Init { Zeros, Ones, Normal02, XavierUniform };

// Named parameter collection. Iteration and indexing follow name order, so a
// store rebuilt from the same config is identical regardless of creation
// order. Initialization draws from an RNG seeded by (name hash, seed).
class ParamStore {
 public:
  Parameter& create(const std::string& name, Shape shape, Init init, uint64_t seed);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  int count() const { return static_cast<int>(ordered_.size()); }
  const std::vector<Parameter*>& ordered() const { return ordered_; }

  void copy_values_from(const ParamStore& other);  // by name, all names must match
  void reset_optimizer_state();                    // clears Adam moments and step counts

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
  std::vector<Parameter*> ordered_;
};

// Per-parameter gradient buffers, indexed like the store.
class GradAccum {
 public:
  explicit GradAccum(const ParamStore& store);
  void add(int index, const Tensor& g);
  void add(const GradAccum& other);
  void scale(double s);
  void zero();
  const Tensor& at(int index) const { return grads_[static_cast<size_t>(index)]; }
  int count() const { return static_cast<int>(grads_.size()); }

 private:
  std::vector<Tensor> grads_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update over every parameter in the store.
void adam_step(ParamStore& params, const GradAccum& grads, const AdamConfig& cfg);

// Checkpoint file: version tag, a metadata JSON string, then name -> shape +
// little-endian doubles for every parameter. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& meta_json);

struct CheckpointData {
  std::string meta_json;
  std::vector<std::pair<std::string, Tensor>> entries;  // name order
};
CheckpointData read_checkpoint(const std::string& path);

// Copies checkpoint tensors into matching store parameters. Every entry must
// exist in the store with the same shape. Returns the metadata string.
std::string load_checkpoint(const std::string& path, ParamStore& store);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_coord = -1;
};

// Central finite differences against reverse-mode gradients. `run` must
// rebuild the computation from the store's current parameter values and, when
// handed an accumulator, backpropagate into it; it must be deterministic.
// `subset` limits the checked parameters (empty = all in the store).
GradCheckReport grad_check(const std::function<double(GradAccum*)>& run, ParamStore& store,
                           const std::vector<Parameter*>& subset = {}, double fd_step = 1e-3);

}  // namespace rcrank
