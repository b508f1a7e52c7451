#include "rcrank/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "rcrank/error.hpp"
#include "rcrank/params.hpp"

namespace rcrank {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

namespace {

CMatMap as_mat(const Tensor& t) {
  if (t.rank() != 2) raise(ErrorCode::ShapeError, "expected rank-2 tensor, got " + shape_str(t.shape()));
  return CMatMap(t.data(), t.rows(), t.cols());
}

MatMap as_mat(Tensor& t) {
  if (t.rank() != 2) raise(ErrorCode::ShapeError, "expected rank-2 tensor, got " + shape_str(t.shape()));
  return MatMap(t.data(), t.rows(), t.cols());
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) raise(ErrorCode::NumericalError, std::string("non-finite result in ") + op);
}

void require_rank2(const Node* n, const char* op) {
  if (n->value().rank() != 2)
    raise(ErrorCode::ShapeError, std::string(op) + ": expected rank-2, got " + shape_str(n->shape()));
}

}  // namespace

Rng& Graph::rng() {
  if (!rng_) raise(ErrorCode::InvalidState, "graph built without an RNG");
  return *rng_;
}

Node* Graph::make(Tensor value, const std::vector<Node*>& inputs, const char* op) {
  check_finite(value, op);
  auto n = std::make_unique<Node>();
  n->value_own = std::move(value);
  for (Node* in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

Tensor& Graph::grad_of(Node* n) {
  if (!n->grad_allocated) {
    n->grad = Tensor(n->value().shape());
    n->grad_allocated = true;
  }
  return n->grad;
}

Node* Graph::constant(Tensor t) {
  auto n = std::make_unique<Node>();
  n->value_own = std::move(t);
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

Node* Graph::param(const Parameter& p) {
  auto n = std::make_unique<Node>();
  n->value_ref = &p.value;
  n->requires_grad = true;
  n->param_index = p.index;
  nodes_.push_back(std::move(n));
  Node* raw = nodes_.back().get();
  param_bindings_.emplace_back(&p, raw);
  return raw;
}

Node* Graph::add(Node* a, Node* b) {
  const Tensor& av = a->value();
  const Tensor& bv = b->value();
  bool bcast = false;
  if (!av.same_shape(bv)) {
    if (av.rank() == 2 && bv.rank() == 2 && bv.rows() == 1 && bv.cols() == av.cols()) {
      bcast = true;
    } else {
      raise(ErrorCode::ShapeError, "add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
  }
  Tensor out = av;
  if (bcast) {
    for (int r = 0; r < out.rows(); ++r)
      for (int c = 0; c < out.cols(); ++c) out.at(r, c) += bv.at(0, c);
  } else {
    double* o = out.data();
    const double* bd = bv.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] += bd[i];
  }
  Node* n = make(std::move(out), {a, b}, "add");
  n->backprop = [a, b, bcast](Graph& g, Node& self) {
    if (a->requires_grad) {
      Tensor& da = g.grad_of(a);
      const double* sg = self.grad.data();
      double* d = da.data();
      for (int64_t i = 0; i < da.size(); ++i) d[i] += sg[i];
    }
    if (b->requires_grad) {
      Tensor& db = g.grad_of(b);
      if (bcast) {
        for (int r = 0; r < self.grad.rows(); ++r)
          for (int c = 0; c < self.grad.cols(); ++c) db.at(0, c) += self.grad.at(r, c);
      } else {
        const double* sg = self.grad.data();
        double* d = db.data();
        for (int64_t i = 0; i < db.size(); ++i) d[i] += sg[i];
      }
    }
  };
  return n;
}

Node* Graph::add_scalar(Node* a, double c) {
  Tensor out = a->value();
  for (auto& x : out.vec()) x += c;
  Node* n = make(std::move(out), {a}, "add_scalar");
  n->backprop = [a](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    Tensor& da = g.grad_of(a);
    const double* sg = self.grad.data();
    double* d = da.data();
    for (int64_t i = 0; i < da.size(); ++i) d[i] += sg[i];
  };
  return n;
}

Node* Graph::sub(Node* a, Node* b) {
  const Tensor& av = a->value();
  const Tensor& bv = b->value();
  if (!av.same_shape(bv)) raise(ErrorCode::ShapeError, "sub: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out = av;
  double* o = out.data();
  const double* bd = bv.data();
  for (int64_t i = 0; i < out.size(); ++i) o[i] -= bd[i];
  Node* n = make(std::move(out), {a, b}, "sub");
  n->backprop = [a, b](Graph& g, Node& self) {
    const double* sg = self.grad.data();
    if (a->requires_grad) {
      double* d = g.grad_of(a).data();
      for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += sg[i];
    }
    if (b->requires_grad) {
      double* d = g.grad_of(b).data();
      for (int64_t i = 0; i < self.grad.size(); ++i) d[i] -= sg[i];
    }
  };
  return n;
}

Node* Graph::mul(Node* a, Node* b) {
  const Tensor& av = a->value();
  const Tensor& bv = b->value();
  if (!av.same_shape(bv)) raise(ErrorCode::ShapeError, "mul: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out = av;
  double* o = out.data();
  const double* bd = bv.data();
  for (int64_t i = 0; i < out.size(); ++i) o[i] *= bd[i];
  Node* n = make(std::move(out), {a, b}, "mul");
  n->backprop = [a, b](Graph& g, Node& self) {
    const double* sg = self.grad.data();
    if (a->requires_grad) {
      double* d = g.grad_of(a).data();
      const double* bd2 = b->value().data();
      for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += sg[i] * bd2[i];
    }
    if (b->requires_grad) {
      double* d = g.grad_of(b).data();
      const double* ad2 = a->value().data();
      for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += sg[i] * ad2[i];
    }
  };
  return n;
}

Node* Graph::scale(Node* a, double s) {
  Tensor out = a->value();
  for (auto& x : out.vec()) x *= s;
  Node* n = make(std::move(out), {a}, "scale");
  n->backprop = [a, s](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double* d = g.grad_of(a).data();
    const double* sg = self.grad.data();
    for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += s * sg[i];
  };
  return n;
}

Node* Graph::matmul(Node* a, Node* b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a->cols() != b->rows())
    raise(ErrorCode::ShapeError, "matmul: " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  Tensor out({a->rows(), b->cols()});
  as_mat(out).noalias() = as_mat(a->value()) * as_mat(b->value());
  Node* n = make(std::move(out), {a, b}, "matmul");
  n->backprop = [a, b](Graph& g, Node& self) {
    CMatMap dc = as_mat(std::as_const(self.grad));
    if (a->requires_grad) as_mat(g.grad_of(a)).noalias() += dc * as_mat(b->value()).transpose();
    if (b->requires_grad) as_mat(g.grad_of(b)).noalias() += as_mat(a->value()).transpose() * dc;
  };
  return n;
}

Node* Graph::transpose(Node* a) {
  require_rank2(a, "transpose");
  Tensor out({a->cols(), a->rows()});
  as_mat(out) = as_mat(a->value()).transpose();
  Node* n = make(std::move(out), {a}, "transpose");
  n->backprop = [a](Graph& g, Node& self) {
    if (a->requires_grad) as_mat(g.grad_of(a)) += as_mat(self.grad).transpose();
  };
  return n;
}

Node* Graph::concat(const std::vector<Node*>& xs, int axis) {
  if (xs.empty()) raise(ErrorCode::InvalidInput, "concat of zero tensors");
  if (axis != 0 && axis != 1) raise(ErrorCode::ShapeError, "concat: axis must be 0 or 1");
  for (Node* x : xs) require_rank2(x, "concat");
  int fixed = axis == 0 ? xs[0]->cols() : xs[0]->rows();
  int total = 0;
  for (Node* x : xs) {
    int f = axis == 0 ? x->cols() : x->rows();
    if (f != fixed) raise(ErrorCode::ShapeError, "concat: incompatible " + shape_str(x->shape()));
    total += axis == 0 ? x->rows() : x->cols();
  }
  Tensor out(axis == 0 ? Shape{total, fixed} : Shape{fixed, total});
  int off = 0;
  for (Node* x : xs) {
    const Tensor& v = x->value();
    if (axis == 0) {
      std::copy(v.data(), v.data() + v.size(), out.data() + static_cast<int64_t>(off) * fixed);
      off += v.rows();
    } else {
      for (int r = 0; r < fixed; ++r)
        for (int c = 0; c < v.cols(); ++c) out.at(r, off + c) = v.at(r, c);
      off += v.cols();
    }
  }
  std::vector<Node*> ins = xs;
  Node* n = make(std::move(out), ins, "concat");
  n->backprop = [ins, axis](Graph& g, Node& self) {
    int off2 = 0;
    for (Node* x : ins) {
      const Tensor& v = x->value();
      if (x->requires_grad) {
        Tensor& dx = g.grad_of(x);
        if (axis == 0) {
          const double* src = self.grad.data() + static_cast<int64_t>(off2) * v.cols();
          double* d = dx.data();
          for (int64_t i = 0; i < v.size(); ++i) d[i] += src[i];
        } else {
          for (int r = 0; r < v.rows(); ++r)
            for (int c = 0; c < v.cols(); ++c) dx.at(r, c) += self.grad.at(r, off2 + c);
        }
      }
      off2 += axis == 0 ? v.rows() : v.cols();
    }
  };
  return n;
}

Node* Graph::slice(Node* a, int axis, int start, int len) {
  require_rank2(a, "slice");
  if (axis != 0 && axis != 1) raise(ErrorCode::ShapeError, "slice: axis must be 0 or 1");
  int extent = axis == 0 ? a->rows() : a->cols();
  if (start < 0 || len <= 0 || start + len > extent)
    raise(ErrorCode::ShapeError, "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                     ") out of " + shape_str(a->shape()));
  const Tensor& v = a->value();
  Tensor out(axis == 0 ? Shape{len, v.cols()} : Shape{v.rows(), len});
  if (axis == 0) {
    std::copy(v.data() + static_cast<int64_t>(start) * v.cols(), v.data() + static_cast<int64_t>(start + len) * v.cols(),
              out.data());
  } else {
    for (int r = 0; r < v.rows(); ++r)
      for (int c = 0; c < len; ++c) out.at(r, c) = v.at(r, start + c);
  }
  Node* n = make(std::move(out), {a}, "slice");
  n->backprop = [a, axis, start, len](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    Tensor& da = g.grad_of(a);
    if (axis == 0) {
      double* d = da.data() + static_cast<int64_t>(start) * da.cols();
      const double* sg = self.grad.data();
      for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += sg[i];
    } else {
      for (int r = 0; r < da.rows(); ++r)
        for (int c = 0; c < len; ++c) da.at(r, start + c) += self.grad.at(r, c);
    }
  };
  return n;
}

Node* Graph::reshape(Node* a, Shape shape) {
  if (shape_size(shape) != a->value().size())
    raise(ErrorCode::ShapeError, "reshape: " + shape_str(a->shape()) + " to " + shape_str(shape));
  Tensor out(shape, a->value().vec());
  Node* n = make(std::move(out), {a}, "reshape");
  n->backprop = [a](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double* d = g.grad_of(a).data();
    const double* sg = self.grad.data();
    for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += sg[i];
  };
  return n;
}

Node* Graph::rows(Node* a, std::vector<int> idx) {
  require_rank2(a, "rows");
  const Tensor& v = a->value();
  for (int i : idx)
    if (i < 0 || i >= v.rows()) raise(ErrorCode::ShapeError, "rows: index " + std::to_string(i) + " out of range");
  Tensor out({static_cast<int>(idx.size()), v.cols()});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(v.data() + static_cast<int64_t>(idx[r]) * v.cols(), v.data() + static_cast<int64_t>(idx[r] + 1) * v.cols(),
              out.data() + static_cast<int64_t>(r) * v.cols());
  Node* n = make(std::move(out), {a}, "rows");
  n->backprop = [a, idx = std::move(idx)](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    Tensor& da = g.grad_of(a);
    for (size_t r = 0; r < idx.size(); ++r) {
      double* d = da.data() + static_cast<int64_t>(idx[r]) * da.cols();
      const double* sg = self.grad.data() + static_cast<int64_t>(r) * da.cols();
      for (int c = 0; c < da.cols(); ++c) d[c] += sg[c];
    }
  };
  return n;
}

Node* Graph::softmax(Node* a, int axis) {
  require_rank2(a, "softmax");
  if (axis != 0 && axis != 1) raise(ErrorCode::ShapeError, "softmax: axis must be 0 or 1");
  const Tensor& v = a->value();
  Tensor out(v.shape());
  auto run_line = [&](int n_elems, auto get, auto set) {
    double mx = -1e300;
    for (int i = 0; i < n_elems; ++i) mx = std::max(mx, get(i));
    double denom = 0.0;
    for (int i = 0; i < n_elems; ++i) denom += std::exp(get(i) - mx);
    for (int i = 0; i < n_elems; ++i) set(i, std::exp(get(i) - mx) / denom);
  };
  if (axis == 1) {
    for (int r = 0; r < v.rows(); ++r)
      run_line(v.cols(), [&](int i) { return v.at(r, i); }, [&](int i, double x) { out.at(r, i) = x; });
  } else {
    for (int c = 0; c < v.cols(); ++c)
      run_line(v.rows(), [&](int i) { return v.at(i, c); }, [&](int i, double x) { out.at(i, c) = x; });
  }
  Node* n = make(std::move(out), {a}, "softmax");
  n->backprop = [a, axis](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    Tensor& da = g.grad_of(a);
    const Tensor& y = self.value();
    const Tensor& dy = self.grad;
    auto bp_line = [&](int n_elems, auto gy, auto gdy, auto add_dx) {
      double dot = 0.0;
      for (int i = 0; i < n_elems; ++i) dot += gdy(i) * gy(i);
      for (int i = 0; i < n_elems; ++i) add_dx(i, gy(i) * (gdy(i) - dot));
    };
    if (axis == 1) {
      for (int r = 0; r < y.rows(); ++r)
        bp_line(y.cols(), [&](int i) { return y.at(r, i); }, [&](int i) { return dy.at(r, i); },
                [&](int i, double x) { da.at(r, i) += x; });
    } else {
      for (int c = 0; c < y.cols(); ++c)
        bp_line(y.rows(), [&](int i) { return y.at(i, c); }, [&](int i) { return dy.at(i, c); },
                [&](int i, double x) { da.at(i, c) += x; });
    }
  };
  return n;
}

Node* Graph::sigmoid(Node* a) {
  Tensor out = a->value();
  for (auto& x : out.vec()) x = 1.0 / (1.0 + std::exp(-x));
  Node* n = make(std::move(out), {a}, "sigmoid");
  n->backprop = [a](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double* d = g.grad_of(a).data();
    const double* y = self.value().data();
    const double* sg = self.grad.data();
    for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += sg[i] * y[i] * (1.0 - y[i]);
  };
  return n;
}

Node* Graph::relu(Node* a) {
  Tensor out = a->value();
  for (auto& x : out.vec()) x = x > 0.0 ? x : 0.0;
  Node* n = make(std::move(out), {a}, "relu");
  n->backprop = [a](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double* d = g.grad_of(a).data();
    const double* x = a->value().data();
    const double* sg = self.grad.data();
    for (int64_t i = 0; i < self.grad.size(); ++i) d[i] += x[i] > 0.0 ? sg[i] : 0.0;
  };
  return n;
}

Node* Graph::layer_norm(Node* a, Node* gain, Node* bias) {
  require_rank2(a, "layer_norm");
  int d = a->cols();
  if (gain->value().rank() != 2 || gain->rows() != 1 || gain->cols() != d || !gain->value().same_shape(bias->value()))
    raise(ErrorCode::ShapeError, "layer_norm: gain/bias must be [1x" + std::to_string(d) + "]");
  constexpr double kEps = 1e-5;
  const Tensor& v = a->value();
  Tensor out(v.shape());
  Tensor norm(v.shape());     // (x - mu) / sigma, cached for backward
  std::vector<double> inv_sigma(static_cast<size_t>(v.rows()));
  for (int r = 0; r < v.rows(); ++r) {
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += v.at(r, c);
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (v.at(r, c) - mu) * (v.at(r, c) - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int c = 0; c < d; ++c) {
      norm.at(r, c) = (v.at(r, c) - mu) * is;
      out.at(r, c) = norm.at(r, c) * gain->value().at(0, c) + bias->value().at(0, c);
    }
  }
  Node* n = make(std::move(out), {a, gain, bias}, "layer_norm");
  n->backprop = [a, gain, bias, norm = std::move(norm), inv_sigma = std::move(inv_sigma), d](Graph& g, Node& self) {
    const Tensor& dy = self.grad;
    if (gain->requires_grad) {
      Tensor& dg = g.grad_of(gain);
      for (int r = 0; r < dy.rows(); ++r)
        for (int c = 0; c < d; ++c) dg.at(0, c) += dy.at(r, c) * norm.at(r, c);
    }
    if (bias->requires_grad) {
      Tensor& db = g.grad_of(bias);
      for (int r = 0; r < dy.rows(); ++r)
        for (int c = 0; c < d; ++c) db.at(0, c) += dy.at(r, c);
    }
    if (a->requires_grad) {
      Tensor& da = g.grad_of(a);
      for (int r = 0; r < dy.rows(); ++r) {
        double sum_gdy = 0.0, sum_gdyn = 0.0;
        for (int c = 0; c < d; ++c) {
          double gdy = dy.at(r, c) * gain->value().at(0, c);
          sum_gdy += gdy;
          sum_gdyn += gdy * norm.at(r, c);
        }
        for (int c = 0; c < d; ++c) {
          double gdy = dy.at(r, c) * gain->value().at(0, c);
          da.at(r, c) += inv_sigma[static_cast<size_t>(r)] * (gdy - sum_gdy / d - norm.at(r, c) * sum_gdyn / d);
        }
      }
    }
  };
  return n;
}

Node* Graph::dropout(Node* a, double rate) {
  if (!training_ || rate <= 0.0) return a;  // eval path is the identity
  if (rate >= 1.0) raise(ErrorCode::InvalidInput, "dropout rate must be < 1");
  Rng& r = rng();
  const Tensor& v = a->value();
  Tensor out(v.shape());
  std::vector<uint8_t> keep(static_cast<size_t>(v.size()));
  double inv_keep = 1.0 / (1.0 - rate);
  for (int64_t i = 0; i < v.size(); ++i) {
    keep[static_cast<size_t>(i)] = r.uniform() >= rate ? 1 : 0;
    out.data()[i] = keep[static_cast<size_t>(i)] ? v.data()[i] * inv_keep : 0.0;
  }
  Node* n = make(std::move(out), {a}, "dropout");
  n->backprop = [a, keep = std::move(keep), inv_keep](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double* d = g.grad_of(a).data();
    const double* sg = self.grad.data();
    for (int64_t i = 0; i < self.grad.size(); ++i)
      if (keep[static_cast<size_t>(i)]) d[i] += sg[i] * inv_keep;
  };
  return n;
}

Node* Graph::conv2d(Node* x, Node* kernel, Node* bias, int stride_h, int stride_w, int pad_h, int pad_w) {
  const Tensor& xv = x->value();
  const Tensor& kv = kernel->value();
  if (xv.rank() != 3) raise(ErrorCode::ShapeError, "conv2d: input must be {C,H,W}, got " + shape_str(xv.shape()));
  if (kv.rank() != 4) raise(ErrorCode::ShapeError, "conv2d: kernel must be {O,C,kh,kw}, got " + shape_str(kv.shape()));
  int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  int O = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != C)
    raise(ErrorCode::ShapeError, "conv2d: channel mismatch " + shape_str(xv.shape()) + " vs " + shape_str(kv.shape()));
  if (bias->value().size() != O) raise(ErrorCode::ShapeError, "conv2d: bias size must equal out channels");
  if (stride_h < 1 || stride_w < 1) raise(ErrorCode::InvalidInput, "conv2d: stride must be >= 1");
  int OH = (H + 2 * pad_h - kh) / stride_h + 1;
  int OW = (W + 2 * pad_w - kw) / stride_w + 1;
  if (OH <= 0 || OW <= 0) raise(ErrorCode::ShapeError, "conv2d: empty output");
  Tensor out({O, OH, OW});
  auto xat = [&](int c, int i, int j) { return xv.data()[(static_cast<int64_t>(c) * H + i) * W + j]; };
  auto kat = [&](int o, int c, int u, int v) {
    return kv.data()[((static_cast<int64_t>(o) * C + c) * kh + u) * kw + v];
  };
  for (int o = 0; o < O; ++o) {
    for (int i = 0; i < OH; ++i) {
      for (int j = 0; j < OW; ++j) {
        double acc = bias->value().data()[o];
        for (int c = 0; c < C; ++c) {
          for (int u = 0; u < kh; ++u) {
            int yy = i * stride_h - pad_h + u;
            if (yy < 0 || yy >= H) continue;
            for (int v = 0; v < kw; ++v) {
              int xx = j * stride_w - pad_w + v;
              if (xx < 0 || xx >= W) continue;
              acc += xat(c, yy, xx) * kat(o, c, u, v);
            }
          }
        }
        out.data()[(static_cast<int64_t>(o) * OH + i) * OW + j] = acc;
      }
    }
  }
  Node* n = make(std::move(out), {x, kernel, bias}, "conv2d");
  n->backprop = [x, kernel, bias, stride_h, stride_w, pad_h, pad_w, C, H, W, O, kh, kw, OH, OW](Graph& g, Node& self) {
    const Tensor& dy = self.grad;
    auto dyat = [&](int o, int i, int j) { return dy.data()[(static_cast<int64_t>(o) * OH + i) * OW + j]; };
    if (bias->requires_grad) {
      Tensor& db = g.grad_of(bias);
      for (int o = 0; o < O; ++o) {
        double acc = 0.0;
        for (int i = 0; i < OH; ++i)
          for (int j = 0; j < OW; ++j) acc += dyat(o, i, j);
        db.data()[o] += acc;
      }
    }
    const Tensor& xv2 = x->value();
    const Tensor& kv2 = kernel->value();
    auto xat2 = [&](int c, int i, int j) { return xv2.data()[(static_cast<int64_t>(c) * H + i) * W + j]; };
    auto kat2 = [&](int o, int c, int u, int v) {
      return kv2.data()[((static_cast<int64_t>(o) * C + c) * kh + u) * kw + v];
    };
    if (kernel->requires_grad) {
      Tensor& dk = g.grad_of(kernel);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < OH; ++i)
          for (int j = 0; j < OW; ++j) {
            double dval = dyat(o, i, j);
            if (dval == 0.0) continue;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < kh; ++u) {
                int yy = i * stride_h - pad_h + u;
                if (yy < 0 || yy >= H) continue;
                for (int v = 0; v < kw; ++v) {
                  int xx = j * stride_w - pad_w + v;
                  if (xx < 0 || xx >= W) continue;
                  dk.data()[((static_cast<int64_t>(o) * C + c) * kh + u) * kw + v] += dval * xat2(c, yy, xx);
                }
              }
          }
    }
    if (x->requires_grad) {
      Tensor& dx = g.grad_of(x);
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < OH; ++i)
          for (int j = 0; j < OW; ++j) {
            double dval = dyat(o, i, j);
            if (dval == 0.0) continue;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < kh; ++u) {
                int yy = i * stride_h - pad_h + u;
                if (yy < 0 || yy >= H) continue;
                for (int v = 0; v < kw; ++v) {
                  int xx = j * stride_w - pad_w + v;
                  if (xx < 0 || xx >= W) continue;
                  dx.data()[(static_cast<int64_t>(c) * H + yy) * W + xx] += dval * kat2(o, c, u, v);
                }
              }
          }
    }
  };
  return n;
}

Node* Graph::sum(Node* a) {
  double acc = 0.0;
  for (double v : a->value().vec()) acc += v;
  Node* n = make(Tensor::scalar(acc), {a}, "sum");
  n->backprop = [a](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double sg = self.grad.item();
    double* d = g.grad_of(a).data();
    for (int64_t i = 0; i < a->value().size(); ++i) d[i] += sg;
  };
  return n;
}

Node* Graph::mean(Node* a) {
  double acc = 0.0;
  for (double v : a->value().vec()) acc += v;
  int64_t count = a->value().size();
  Node* n = make(Tensor::scalar(acc / static_cast<double>(count)), {a}, "mean");
  n->backprop = [a, count](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    double sg = self.grad.item() / static_cast<double>(count);
    double* d = g.grad_of(a).data();
    for (int64_t i = 0; i < a->value().size(); ++i) d[i] += sg;
  };
  return n;
}

Node* Graph::mean_rows(Node* a) {
  require_rank2(a, "mean_rows");
  const Tensor& v = a->value();
  Tensor out({1, v.cols()});
  for (int r = 0; r < v.rows(); ++r)
    for (int c = 0; c < v.cols(); ++c) out.at(0, c) += v.at(r, c);
  for (int c = 0; c < v.cols(); ++c) out.at(0, c) /= v.rows();
  Node* n = make(std::move(out), {a}, "mean_rows");
  n->backprop = [a](Graph& g, Node& self) {
    if (!a->requires_grad) return;
    Tensor& da = g.grad_of(a);
    double inv = 1.0 / da.rows();
    for (int r = 0; r < da.rows(); ++r)
      for (int c = 0; c < da.cols(); ++c) da.at(r, c) += self.grad.at(0, c) * inv;
  };
  return n;
}

void Graph::backward(Node* loss) {
  if (loss->value().size() != 1) raise(ErrorCode::ShapeError, "backward: loss must be scalar");
  grad_of(loss).fill(1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (n->grad_allocated && n->backprop && n->requires_grad) n->backprop(*this, *n);
  }
}

void Graph::accumulate_param_grads(GradAccum& acc) const {
  for (const auto& [p, node] : param_bindings_) {
    if (node->grad_allocated) acc.add(p->index, node->grad);
  }
}

}  // namespace rcrank
