#include "rcrank/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rcrank {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) raise(ErrorCode::ShapeError, "non-positive dimension in " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_size(shape_)) {
    raise(ErrorCode::ShapeError,
          "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

bool Tensor::all_finite() const {
  // NaN/Inf anywhere drives the sum non-finite; values in this project are
  // far from the overflow range.
  double acc = 0.0;
  for (double v : data_) acc += v;
  return std::isfinite(acc);
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

}  // namespace rcrank
