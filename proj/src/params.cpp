#include "rcrank/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rcrank/error.hpp"

namespace rcrank {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian host");

Parameter& ParamStore::create(const std::string& name, Shape shape, Init init, uint64_t seed) {
  if (params_.count(name)) raise(ErrorCode::InvalidState, "duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(shape);
  Rng rng(fnv1a64(name) ^ Rng::splitmix(seed));
  switch (init) {
    case Init::Zeros:
      break;
    case Init::Ones:
      p->value.fill(1.0);
      break;
    case Init::Normal02:
      for (auto& x : p->value.vec()) x = rng.normal(0.0, 0.02);
      break;
    case Init::XavierUniform: {
      int fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape[0];
      int fan_out = shape.back();
      if (shape.size() == 4) {  // conv kernel {O,C,kh,kw}
        fan_in = shape[1] * shape[2] * shape[3];
        fan_out = shape[0] * shape[2] * shape[3];
      }
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& x : p->value.vec()) x = rng.uniform(-bound, bound);
      break;
    }
  }
  Parameter* raw = p.get();
  params_.emplace(name, std::move(p));
  ordered_.clear();
  ordered_.reserve(params_.size());
  for (auto& [k, v] : params_) {
    v->index = static_cast<int>(ordered_.size());
    ordered_.push_back(v.get());
  }
  return *raw;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : it->second.get();
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : it->second.get();
}

Parameter& ParamStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) raise(ErrorCode::InvalidState, "unknown parameter " + name);
  return *p;
}

const Parameter& ParamStore::at(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) raise(ErrorCode::InvalidState, "unknown parameter " + name);
  return *p;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.count() != count()) {
    raise(ErrorCode::SchemaError, "parameter count mismatch: " + std::to_string(other.count()) + " vs " +
                                      std::to_string(count()));
  }
  for (Parameter* p : ordered_) {
    const Parameter* src = other.find(p->name);
    if (!src || !src->value.same_shape(p->value)) raise(ErrorCode::SchemaError, "parameter mismatch at " + p->name);
    p->value = src->value;
  }
}

void ParamStore::reset_optimizer_state() {
  for (Parameter* p : ordered_) {
    p->m = Tensor();
    p->v = Tensor();
    p->step = 0;
  }
}

GradAccum::GradAccum(const ParamStore& store) {
  grads_.reserve(static_cast<size_t>(store.count()));
  for (const Parameter* p : store.ordered()) grads_.emplace_back(p->value.shape());
}

void GradAccum::add(int index, const Tensor& g) {
  Tensor& dst = grads_[static_cast<size_t>(index)];
  if (!dst.same_shape(g)) raise(ErrorCode::ShapeError, "grad shape " + shape_str(g.shape()) + " vs " + shape_str(dst.shape()));
  const double* src = g.data();
  double* d = dst.data();
  for (int64_t i = 0; i < dst.size(); ++i) d[i] += src[i];
}

void GradAccum::add(const GradAccum& other) {
  for (size_t i = 0; i < grads_.size(); ++i) {
    const double* src = other.grads_[i].data();
    double* dst = grads_[i].data();
    for (int64_t k = 0; k < grads_[i].size(); ++k) dst[k] += src[k];
  }
}

void GradAccum::scale(double s) {
  for (auto& g : grads_)
    for (auto& x : g.vec()) x *= s;
}

void GradAccum::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

void adam_step(ParamStore& params, const GradAccum& grads, const AdamConfig& cfg) {
  for (Parameter* p : params.ordered()) {
    const Tensor& g = grads.at(p->index);
    if (p->m.size() == 0) {
      p->m = Tensor(p->value.shape());
      p->v = Tensor(p->value.shape());
    }
    p->step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    double* w = p->value.data();
    double* m = p->m.data();
    double* v = p->v.data();
    const double* gd = g.data();
    for (int64_t i = 0; i < p->value.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!p->value.all_finite()) raise(ErrorCode::NumericalError, "non-finite parameter after Adam step: " + p->name);
  }
}

namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) raise(ErrorCode::ParseError, "truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& meta_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(meta_json.size()));
  os.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
  write_pod(os, static_cast<uint64_t>(params.count()));
  for (const Parameter* p : params.ordered()) {
    write_pod(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(os, static_cast<uint32_t>(p->value.rank()));
    for (int i = 0; i < p->value.rank(); ++i) write_pod(os, static_cast<uint64_t>(p->value.dim(i)));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) raise(ErrorCode::Internal, "write failed: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorCode::MissingFile, "cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) raise(ErrorCode::ParseError, "bad checkpoint magic in " + path);
  uint32_t version = read_pod<uint32_t>(is);
  if (version != kVersion) raise(ErrorCode::SchemaError, "unsupported checkpoint version " + std::to_string(version));
  CheckpointData out;
  uint64_t meta_len = read_pod<uint64_t>(is);
  out.meta_json.resize(meta_len);
  is.read(out.meta_json.data(), static_cast<std::streamsize>(meta_len));
  uint64_t n = read_pod<uint64_t>(is);
  out.entries.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = read_pod<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t k = 0; k < rank; ++k) shape[k] = static_cast<int>(read_pod<uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) raise(ErrorCode::ParseError, "truncated checkpoint entry " + name);
    out.entries.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

std::string load_checkpoint(const std::string& path, ParamStore& store) {
  CheckpointData data = read_checkpoint(path);
  for (auto& [name, tensor] : data.entries) {
    Parameter* p = store.find(name);
    if (!p) raise(ErrorCode::SchemaError, "checkpoint entry " + name + " not in model");
    if (!p->value.same_shape(tensor)) {
      raise(ErrorCode::SchemaError, "shape mismatch for " + name + ": " + shape_str(tensor.shape()) + " vs " +
                                        shape_str(p->value.shape()));
    }
    p->value = tensor;
  }
  return data.meta_json;
}

GradCheckReport grad_check(const std::function<double(GradAccum*)>& run, ParamStore& store,
                           const std::vector<Parameter*>& subset, double fd_step) {
  GradCheckReport report;
  std::vector<Parameter*> params = subset.empty() ? store.ordered() : subset;
  GradAccum analytic(store);
  run(&analytic);
  for (Parameter* p : params) {
    const Tensor& g = analytic.at(p->index);
    for (int64_t i = 0; i < p->value.size(); ++i) {
      double saved = p->value.data()[i];
      auto fd_rel = [&](double h) {
        p->value.data()[i] = saved + h;
        double fp = run(nullptr);
        p->value.data()[i] = saved - h;
        double fm = run(nullptr);
        p->value.data()[i] = saved;
        double fd = (fp - fm) / (2.0 * h);
        return std::abs(g.data()[i] - fd) / std::max(1.0, std::abs(fd));
      };
      double rel = fd_rel(fd_step);
      // A suspect coordinate whose +-h interval crosses a hinge/relu kink
      // gives an O(1) one-off error that vanishes under a smaller step; a
      // wrong analytic gradient keeps failing at every step.
      if (rel > 1e-5) rel = std::min(rel, fd_rel(fd_step / 8.0));
      if (rel > 1e-5) rel = std::min(rel, fd_rel(fd_step / 64.0));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name;
        report.worst_coord = static_cast<int>(i);
      }
    }
  }
  return report;
}

}  // namespace rcrank
