#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rcrank/rng.hpp"
#include "rcrank/tensor.hpp"

namespace rcrank {

struct Parameter;
class GradAccum;
class Graph;

// One value in the computation tape. Parameter leaves reference the owning
// Parameter's tensor; computed nodes own their value.
struct Node {
  const Tensor* value_ref = nullptr;
  Tensor value_own;
  Tensor grad;
  bool requires_grad = false;
  bool grad_allocated = false;
  int param_index = -1;
  std::function<void(Graph&, Node&)> backprop;

  const Tensor& value() const { return value_ref ? *value_ref : value_own; }
  const Shape& shape() const { return value().shape(); }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
};

// Reverse-mode tape. Build ops forward, then call backward(loss) once.
// A Graph instance is single-threaded; independent instances may run on
// distinct threads.
class Graph {
 public:
  explicit Graph(bool training = false, Rng* rng = nullptr) : training_(training), rng_(rng) {}

  bool training() const { return training_; }
  Rng& rng();

  Node* constant(Tensor t);
  Node* scalar(double v) { return constant(Tensor::scalar(v)); }
  Node* param(const Parameter& p);

  Node* add(Node* a, Node* b);           // same shape, or b broadcast {1,d} over {n,d}
  Node* add_scalar(Node* a, double c);
  Node* sub(Node* a, Node* b);
  Node* mul(Node* a, Node* b);           // elementwise
  Node* scale(Node* a, double s);
  Node* matmul(Node* a, Node* b);
  Node* transpose(Node* a);
  Node* concat(const std::vector<Node*>& xs, int axis);
  Node* slice(Node* a, int axis, int start, int len);
  Node* reshape(Node* a, Shape shape);
  Node* rows(Node* a, std::vector<int> idx);  // gather / embedding lookup
  Node* softmax(Node* a, int axis);
  Node* sigmoid(Node* a);
  Node* relu(Node* a);
  Node* layer_norm(Node* a, Node* gain, Node* bias);
  Node* dropout(Node* a, double rate);
  // x: {C,H,W}, kernel: {O,C,kh,kw}, bias: {O}; explicit stride and zero padding.
  Node* conv2d(Node* x, Node* kernel, Node* bias, int stride_h, int stride_w, int pad_h, int pad_w);
  Node* sum(Node* a);
  Node* mean(Node* a);
  Node* mean_rows(Node* a);  // {n,d} -> {1,d}

  void backward(Node* loss);
  void accumulate_param_grads(GradAccum& acc) const;

  size_t node_count() const { return nodes_.size(); }

 public:
  Tensor& grad_of(Node* n);  // lazily allocates; used by op backward closures

 private:
  Node* make(Tensor value, const std::vector<Node*>& inputs, const char* op);

  bool training_;
  Rng* rng_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<const Parameter*, Node*>> param_bindings_;
};

}  // namespace rcrank
