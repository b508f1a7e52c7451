#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcrank/error.hpp"

namespace rcrank {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major double tensor. Values are plain data; gradients live in the
// computation graph, not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  // Rank-2 accessors.
  int rows() const { return shape_[0]; }
  int cols() const { return shape_[1]; }
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double item() const {
    if (size() != 1) raise(ErrorCode::ShapeError, "item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

}  // namespace rcrank
