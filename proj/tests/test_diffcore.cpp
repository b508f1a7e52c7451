#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "rcrank/error.hpp"
#include "rcrank/graph.hpp"
#include "rcrank/params.hpp"

using namespace rcrank;

namespace {

Parameter& random_param(ParamStore& store, const std::string& name, Shape shape, uint64_t seed) {
  Parameter& p = store.create(name, shape, Init::Zeros, seed);
  Rng rng(seed ^ fnv1a64(name));
  for (auto& x : p.value.vec()) x = rng.uniform(-1.0, 1.0);
  return p;
}

Tensor random_tensor(Shape shape, uint64_t seed) {
  Tensor t(shape);
  Rng rng(seed);
  for (auto& x : t.vec()) x = rng.uniform(-1.0, 1.0);
  return t;
}

// Builds `loss(graph, store)` twice per coordinate for finite differences.
double check_op(const std::function<Node*(Graph&, ParamStore&)>& loss_fn, ParamStore& store) {
  auto run = [&](GradAccum* acc) {
    Graph g(false);
    Node* loss = loss_fn(g, store);
    if (acc) {
      g.backward(loss);
      g.accumulate_param_grads(*acc);
    }
    return loss->value().item();
  };
  return grad_check(run, store).max_rel_err;
}

}  // namespace

TEST_CASE("forward basics") {
  Graph g;
  CHECK(g.sigmoid(g.scalar(0.0))->value().item() == doctest::Approx(0.5));
  CHECK(g.softmax(g.scalar(3.7), 1)->value().item() == doctest::Approx(1.0));

  Node* a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Node* b = g.constant(Tensor({2, 2}, {5, 6, 7, 8}));
  const Tensor& c = g.matmul(a, b)->value();
  CHECK(c.at(0, 0) == 19.0);
  CHECK(c.at(0, 1) == 22.0);
  CHECK(c.at(1, 0) == 43.0);
  CHECK(c.at(1, 1) == 50.0);
}

TEST_CASE("softmax rows sum to one") {
  Graph g;
  Node* x = g.constant(random_tensor({5, 7}, 99));
  const Tensor& y = g.softmax(x, 1)->value();
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += y.at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("shape errors carry both shapes") {
  Graph g;
  Node* a = g.constant(Tensor({2, 3}));
  Node* b = g.constant(Tensor({4, 2}));
  try {
    g.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const RcError& e) {
    CHECK(e.code() == ErrorCode::ShapeError);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("non-finite result is a hard failure") {
  Graph g;
  Node* big = g.constant(Tensor({1, 1}, {1e308}));
  CHECK_THROWS_AS(g.mul(big, big), RcError);
}

TEST_CASE("dropout identity cases") {
  Rng rng(7);
  Graph train_g(true, &rng);
  Node* x = train_g.constant(random_tensor({4, 6}, 3));
  CHECK(train_g.dropout(x, 0.0) == x);  // rate 0 is the identity

  Graph eval_g(false);
  Node* y = eval_g.constant(random_tensor({4, 6}, 3));
  CHECK(eval_g.dropout(y, 0.5) == y);  // eval is always the identity

  // Deterministic under seed.
  auto run_mask = [](uint64_t seed) {
    Rng r(seed);
    Graph g(true, &r);
    Node* v = g.constant(Tensor::full({1, 32}, 1.0));
    return g.dropout(v, 0.3)->value().vec();
  };
  CHECK(run_mask(42) == run_mask(42));
  CHECK(run_mask(42) != run_mask(43));
}

TEST_CASE("grad_check analytic cases") {
  // f(x) = sum(x^2) at [1,2,3] -> grad [2,4,6]
  ParamStore store;
  Parameter& x = store.create("x", {1, 3}, Init::Zeros, 0);
  x.value = Tensor({1, 3}, {1, 2, 3});
  GradAccum acc(store);
  {
    Graph g;
    Node* xn = g.param(x);
    Node* loss = g.sum(g.mul(xn, xn));
    CHECK(loss->value().item() == doctest::Approx(14.0));
    g.backward(loss);
    g.accumulate_param_grads(acc);
  }
  CHECK(acc.at(x.index).at(0, 0) == doctest::Approx(2.0));
  CHECK(acc.at(x.index).at(0, 1) == doctest::Approx(4.0));
  CHECK(acc.at(x.index).at(0, 2) == doctest::Approx(6.0));

  auto run = [&](GradAccum* a) {
    Graph g;
    Node* xn = g.param(x);
    Node* loss = g.sum(g.mul(xn, xn));
    if (a) {
      g.backward(loss);
      g.accumulate_param_grads(*a);
    }
    return loss->value().item();
  };
  CHECK(grad_check(run, store).max_rel_err < 1e-8);

  // Constant function: zero gradient, zero error.
  auto run_const = [&](GradAccum* a) {
    Graph g;
    Node* xn = g.param(x);
    Node* loss = g.sum(g.scale(xn, 0.0));
    if (a) {
      g.backward(loss);
      g.accumulate_param_grads(*a);
    }
    return loss->value().item();
  };
  CHECK(grad_check(run_const, store).max_rel_err == doctest::Approx(0.0));
}

TEST_CASE("per-op gradient checks on random shapes") {
  const uint64_t seeds[5] = {11, 22, 33, 44, 55};
  for (uint64_t seed : seeds) {
    CAPTURE(seed);
    {  // matmul + add bias broadcast + relu + mean
      ParamStore s;
      random_param(s, "a", {3, 4}, seed);
      random_param(s, "b", {4, 5}, seed + 1);
      random_param(s, "bias", {1, 5}, seed + 2);
      double err = check_op(
          [](Graph& g, ParamStore& st) {
            Node* y = g.add(g.matmul(g.param(st.at("a")), g.param(st.at("b"))), g.param(st.at("bias")));
            return g.mean(g.mul(g.relu(y), y));
          },
          s);
      CHECK(err < 1e-4);
    }
    {  // softmax both axes, slice, concat, transpose
      ParamStore s;
      random_param(s, "x", {4, 6}, seed + 3);
      Tensor w = random_tensor({4, 6}, seed + 4);
      double err = check_op(
          [w](Graph& g, ParamStore& st) {
            Node* x = g.param(st.at("x"));
            Node* s1 = g.softmax(x, 1);
            Node* s0 = g.softmax(x, 0);
            Node* left = g.slice(s1, 1, 0, 3);
            Node* right = g.slice(s0, 1, 3, 3);
            Node* cat = g.concat({left, right}, 1);
            Node* both = g.concat({cat, g.transpose(g.transpose(x))}, 0);
            return g.sum(g.mul(g.slice(both, 0, 0, 4), g.constant(w)));
          },
          s);
      CHECK(err < 1e-4);
    }
    {  // sigmoid, layer_norm, sub, scale, add_scalar
      ParamStore s;
      random_param(s, "x", {3, 8}, seed + 5);
      random_param(s, "gain", {1, 8}, seed + 6);
      random_param(s, "bias", {1, 8}, seed + 7);
      double err = check_op(
          [](Graph& g, ParamStore& st) {
            Node* x = g.param(st.at("x"));
            Node* ln = g.layer_norm(x, g.param(st.at("gain")), g.param(st.at("bias")));
            Node* y = g.sub(g.sigmoid(ln), g.scale(ln, 0.25));
            return g.mean(g.mul(g.add_scalar(y, 0.5), y));
          },
          s);
      CHECK(err < 1e-4);
    }
    {  // rows gather with repeated indices, reshape, mean_rows
      ParamStore s;
      random_param(s, "emb", {5, 4}, seed + 8);
      double err = check_op(
          [](Graph& g, ParamStore& st) {
            Node* e = g.rows(g.param(st.at("emb")), {2, 0, 2, 4});
            Node* r = g.reshape(e, {2, 8});
            return g.sum(g.mul(g.mean_rows(r), g.mean_rows(r)));
          },
          s);
      CHECK(err < 1e-4);
    }
    {  // conv2d with stride and padding
      ParamStore s;
      random_param(s, "x", {2, 4, 5}, seed + 9);
      random_param(s, "k", {3, 2, 2, 3}, seed + 10);
      random_param(s, "cb", {3}, seed + 11);
      double err = check_op(
          [](Graph& g, ParamStore& st) {
            Node* y = g.conv2d(g.param(st.at("x")), g.param(st.at("k")), g.param(st.at("cb")), 1, 2, 1, 1);
            return g.mean(g.mul(y, y));
          },
          s);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("adam hand-checked updates") {
  // zero gradient leaves the parameter unchanged
  {
    ParamStore s;
    Parameter& w = s.create("w", {1, 1}, Init::Zeros, 0);
    w.value = Tensor::scalar(1.0);
    GradAccum g(s);
    adam_step(s, g, {});
    CHECK(w.value.item() == 1.0);
  }
  // single scalar, g=1, step 1: bias-corrected update is lr/(1+eps)
  {
    ParamStore s;
    Parameter& w = s.create("w", {1, 1}, Init::Zeros, 0);
    w.value = Tensor::scalar(1.0);
    GradAccum g(s);
    g.add(w.index, Tensor::scalar(1.0));
    AdamConfig cfg;
    adam_step(s, g, cfg);
    CHECK(w.value.item() == doctest::Approx(1.0 - cfg.lr).epsilon(1e-9));
  }
  // determinism: identical runs give identical weights
  {
    auto run = [] {
      ParamStore s;
      random_param(s, "w", {4, 4}, 77);
      for (int step = 0; step < 5; ++step) {
        GradAccum g(s);
        Tensor grad = random_tensor({4, 4}, 100 + static_cast<uint64_t>(step));
        g.add(s.at("w").index, grad);
        adam_step(s, g, {});
      }
      return s.at("w").value.vec();
    };
    CHECK(run() == run());
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  ParamStore s;
  random_param(s, "enc_s/tok", {7, 3}, 5);
  random_param(s, "head/w", {3, 1}, 6);
  std::string path = "test_ckpt.bin";
  save_checkpoint(path, s, "{\"v\":1}");

  ParamStore s2;
  s2.create("enc_s/tok", {7, 3}, Init::Zeros, 0);
  s2.create("head/w", {3, 1}, Init::Zeros, 0);
  std::string meta = load_checkpoint(path, s2);
  CHECK(meta == "{\"v\":1}");
  CHECK(s2.at("enc_s/tok").value.vec() == s.at("enc_s/tok").value.vec());
  CHECK(s2.at("head/w").value.vec() == s.at("head/w").value.vec());

  // identical bytes when saved again
  save_checkpoint("test_ckpt2.bin", s2, "{\"v\":1}");
  auto slurp = [](const char* p) {
    FILE* f = std::fopen(p, "rb");
    REQUIRE(f != nullptr);
    std::string out;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
    std::fclose(f);
    return out;
  };
  CHECK(slurp("test_ckpt.bin") == slurp("test_ckpt2.bin"));
  std::remove("test_ckpt.bin");
  std::remove("test_ckpt2.bin");

  // unknown entry name fails
  ParamStore s3;
  s3.create("other", {7, 3}, Init::Zeros, 0);
  save_checkpoint("test_ckpt3.bin", s3, "");
  CHECK_THROWS_AS(load_checkpoint("test_ckpt3.bin", s2), RcError);
  std::remove("test_ckpt3.bin");
}
