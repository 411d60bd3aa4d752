// Apache License, Version 2.0, refer to LICENSE.txt
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "sbtm/autodiff.hpp"
#include "sbtm/nn.hpp"
#include "sbtm/optim.hpp"

using namespace sbtm;

namespace {

// Central-difference check of d(loss)/d(param) for every entry of every
// parameter. build must construct the full graph from current values.
void check_gradients(const std::vector<Var>& params, const std::function<Var()>& build,
                     double tol = 1e-4, double h = 1e-4) {
  Var loss = build();
  for (const auto& p : params) p->zero_grad();
  backward(loss);
  std::vector<Tensor> grads;
  for (const auto& p : params) grads.push_back(p->grad);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (int64_t j = 0; j < params[pi]->value.size(); ++j) {
      const double orig = params[pi]->value[j];
      const double step = h * std::max(1.0, std::fabs(orig));
      params[pi]->value[j] = orig + step;
      const double up = build()->value.data[0];
      params[pi]->value[j] = orig - step;
      const double dn = build()->value.data[0];
      params[pi]->value[j] = orig;
      const double fd = (up - dn) / (2.0 * step);
      INFO("param ", pi, " entry ", j, " analytic=", grads[pi][j], " fd=", fd);
      CHECK(oracles::rel_err(grads[pi][j], fd) <= tol);
    }
  }
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("d/dx (x*x) at x=3 is 6") {
  Var x = parameter(Tensor::scalar(3.0));
  Var y = mul(x, x);
  backward(y);
  CHECK(x->grad.data[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax of zeros is uniform and its gradient matches FD") {
  Var x = parameter(Tensor({3}, {0.0, 0.0, 0.0}));
  Var y = softmax_rows(x);
  for (int i = 0; i < 3; ++i) CHECK(y->value[i] == doctest::Approx(1.0 / 3.0));

  Rng rng(7);
  Var x2 = parameter(random_tensor({4}, rng));
  const Tensor w = random_tensor({4}, rng);
  check_gradients({x2}, [&]() { return sum_all(mul(softmax_rows(x2), constant(w))); }, 1e-7, 1e-5);
}

TEST_CASE("elementwise op gradients match FD") {
  Rng rng(11);
  Var x = parameter(random_tensor({2, 3}, rng, 0.5));
  const Tensor w = random_tensor({2, 3}, rng);
  auto weighted = [&](const std::function<Var(const Var&)>& op) {
    check_gradients({x}, [&]() { return sum_all(mul(op(x), constant(w))); }, 1e-5, 1e-5);
  };
  weighted([](const Var& v) { return exp_op(v); });
  weighted([](const Var& v) { return softplus(v); });
  weighted([](const Var& v) { return logistic(v); });
  weighted([](const Var& v) { return tanh_op(v); });
  weighted([](const Var& v) { return relu(add_scalar(v, 0.05)); });
  weighted([](const Var& v) { return log_op(add_scalar(exp_op(v), 1.0)); });
  weighted([](const Var& v) { return reciprocal(add_scalar(exp_op(v), 1.0)); });
  weighted([](const Var& v) { return lgamma_op(add_scalar(exp_op(v), 0.5)); });
  weighted([](const Var& v) { return digamma_op(add_scalar(exp_op(v), 0.5)); });
  weighted([](const Var& v) { return log_softmax_rows(v); });
}

TEST_CASE("matmul, concat, slice, transpose, tile, sum_rows gradients match FD") {
  Rng rng(13);
  Var a = parameter(random_tensor({3, 4}, rng));
  Var b = parameter(random_tensor({4, 2}, rng));
  const Tensor w = random_tensor({3, 2}, rng);
  check_gradients({a, b}, [&]() { return sum_all(mul(matmul(a, b), constant(w))); }, 1e-6, 1e-5);

  Var c = parameter(random_tensor({3, 2}, rng));
  check_gradients({a, c}, [&]() {
    Var cat = concat_cols(a, c);
    Var sl = slice_cols(cat, 1, 5);
    return sum_all(mul(sl, sl));
  });

  Var r = parameter(random_tensor({1, 5}, rng));
  check_gradients({r}, [&]() { return sum_all(mul(tile_rows(r, 4), tile_rows(r, 4))); });

  check_gradients({a}, [&]() { return sum_all(mul(transpose(a), transpose(a))); });
  check_gradients({a}, [&]() {
    Var s = sum_rows(a);
    return sum_all(mul(s, s));
  });
}

TEST_CASE("embedding_lookup gathers rows and scatters gradients") {
  Rng rng(17);
  Var table = parameter(random_tensor({5, 3}, rng));
  const std::vector<int> idx = {4, 1, 1, 0};
  Var rows = embedding_rows(table, idx);
  CHECK(rows->value.shape == std::vector<int>{4, 3});
  CHECK(rows->value(0, 0) == table->value(4, 0));
  check_gradients({table}, [&]() {
    Var r = embedding_rows(table, idx);
    return sum_all(mul(r, r));
  });
}

TEST_CASE("stick break rows: simplex output and FD gradients") {
  Rng rng(19);
  Var v = parameter(Tensor({2, 3}, {0.5, 0.5, 0.5, 0.2, 0.7, 0.4}));
  Var pi = stick_break_rows(v);
  CHECK(pi->value.shape == std::vector<int>{2, 4});
  CHECK(pi->value(0, 0) == doctest::Approx(0.5));
  CHECK(pi->value(0, 1) == doctest::Approx(0.25));
  CHECK(pi->value(0, 2) == doctest::Approx(0.125));
  CHECK(pi->value(0, 3) == doctest::Approx(0.125));
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += pi->value(i, k);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Tensor w = random_tensor({2, 4}, rng);
  check_gradients({v}, [&]() { return sum_all(mul(stick_break_rows(v), constant(w))); }, 1e-6,
                  1e-5);
}

TEST_CASE("3-layer MLP: every parameter gradient matches FD") {
  Rng rng(23);
  Mlp mlp(5, {6, 4, 3}, false, 0.0, rng);
  Var x = constant(random_tensor({2, 5}, rng));
  ParamList named;
  mlp.collect("mlp", named);
  std::vector<Var> params;
  for (auto& [name, p] : named) params.push_back(p);
  RngNoise nosample(rng);
  check_gradients(params, [&]() {
    Var h = mlp(x, false, nosample);
    return sum_all(mul(h, h));
  });
}

TEST_CASE("batchnorm: train-mode gradients match FD, eval mode deterministic") {
  Rng rng(29);
  BatchNorm bn(3);
  Var x = parameter(random_tensor({6, 3}, rng));
  const Tensor w = random_tensor({6, 3}, rng);
  // Batch statistics change with x, so keep the running stats fixed per call.
  check_gradients({x, bn.gamma, bn.beta}, [&]() {
    Tensor rm = bn.running_mean, rv = bn.running_var;
    return sum_all(mul(batchnorm(x, bn.gamma, bn.beta, rm, rv, true), constant(w)));
  }, 1e-4, 1e-5);

  bn.running_mean = Tensor({3}, {0.1, -0.2, 0.3});
  bn.running_var = Tensor({3}, {1.1, 0.9, 1.4});
  Var y1 = bn(x, false);
  Var y2 = bn(x, false);
  for (int64_t i = 0; i < y1->value.size(); ++i) CHECK(y1->value[i] == y2->value[i]);
  check_gradients({x, bn.gamma, bn.beta},
                  [&]() { return sum_all(mul(bn(x, false), constant(w))); }, 1e-5, 1e-5);
}

TEST_CASE("dropout: eval mode is the identity, train mode masks and rescales") {
  Rng rng(31);
  Var x = parameter(random_tensor({4, 5}, rng));
  RngNoise noise(rng);
  Var eval_out = dropout(x, 0.5, false, noise);
  CHECK(eval_out.get() == x.get());

  Rng rng2(101);
  RngNoise noise2(rng2);
  Var train_out = dropout(x, 0.5, true, noise2);
  int zeros = 0;
  for (int64_t i = 0; i < train_out->value.size(); ++i) {
    if (train_out->value[i] == 0.0)
      ++zeros;
    else
      CHECK(train_out->value[i] == doctest::Approx(2.0 * x->value[i]));
  }
  CHECK(zeros > 0);
  CHECK(zeros < 20);
}

TEST_CASE("LSTM gradients through 10 unrolled steps match FD") {
  Rng rng(37);
  Lstm lstm(3, 4, 2, rng);
  std::vector<Tensor> inputs;
  for (int t = 0; t < 10; ++t) inputs.push_back(random_tensor({1, 3}, rng, 0.5));
  ParamList named;
  lstm.collect("lstm", named);
  std::vector<Var> params;
  for (auto& [name, p] : named) params.push_back(p);
  check_gradients(params, [&]() {
    auto state = lstm.initial_state(1);
    Var last;
    for (const auto& in : inputs) last = lstm.step(constant(in), state);
    return sum_all(mul(last, last));
  }, 1e-3, 1e-5);
}

TEST_CASE("backward is deterministic") {
  Rng rng(41);
  Var a = parameter(random_tensor({3, 3}, rng));
  Var b = parameter(random_tensor({3, 3}, rng));
  auto run = [&]() {
    Var loss = sum_all(mul(softmax_rows(matmul(a, b)), matmul(a, b)));
    backward(loss);
    return std::make_pair(a->grad, b->grad);
  };
  auto [ga1, gb1] = run();
  auto [ga2, gb2] = run();
  for (int64_t i = 0; i < ga1.size(); ++i) CHECK(ga1[i] == ga2[i]);
  for (int64_t i = 0; i < gb1.size(); ++i) CHECK(gb1[i] == gb2[i]);
}

TEST_CASE("shape mismatch raises with op name") {
  Var a = parameter(Tensor::zeros({2, 3}));
  Var b = parameter(Tensor::zeros({2, 2}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Var x = parameter(Tensor::scalar(1.5));
  Adam opt({x}, 0.1, 0.9, 0.999, 0.0);
  opt.zero_grad();
  opt.step();
  CHECK(x->value.data[0] == doctest::Approx(1.5));
}

TEST_CASE("adam: first step with unit gradient moves by about -lr") {
  Var x = parameter(Tensor::scalar(0.0));
  Adam opt({x}, 0.1, 0.9, 0.999, 0.0);
  opt.zero_grad();
  x->grad.data[0] = 1.0;
  opt.step();
  CHECK(x->value.data[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: 100 steps on x^2 converge near zero") {
  Var x = parameter(Tensor::scalar(1.0));
  Adam opt({x}, 0.05, 0.95, 0.99, 0.0);
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    Var loss = mul(x, x);
    backward(loss);
    opt.step();
  }
  CHECK(std::fabs(x->value.data[0]) < 0.05);
}

TEST_CASE("adam: decoupled weight decay shrinks parameters") {
  Var x = parameter(Tensor::scalar(2.0));
  Adam opt({x}, 0.1, 0.9, 0.999, 0.5);
  opt.zero_grad();
  opt.step();
  // Zero gradient: only the decay term applies.
  CHECK(x->value.data[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("clip_gradients") {
  Var a = parameter(Tensor({2}, {0.6, 0.8}));
  a->grad = Tensor({2}, {0.6, 0.8});  // norm 1.0
  CHECK(clip_gradients({a}, 2.0) == doctest::Approx(1.0));
  CHECK(a->grad[0] == doctest::Approx(0.6));

  a->grad = Tensor({2}, {2.4, 3.2});  // norm 4.0
  CHECK(clip_gradients({a}, 2.0) == doctest::Approx(0.5));
  const double post = std::sqrt(a->grad[0] * a->grad[0] + a->grad[1] * a->grad[1]);
  CHECK(post == doctest::Approx(2.0).epsilon(1e-9));

  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    Var p = parameter(Tensor::zeros({7}));
    for (int i = 0; i < 7; ++i) p->grad[i] = 3.0 * rng.normal();
    clip_gradients({p}, 1.5);
    double norm = 0.0;
    for (int i = 0; i < 7; ++i) norm += p->grad[i] * p->grad[i];
    CHECK(std::sqrt(norm) <= 1.5 + 1e-9);
  }
}

TEST_CASE("kl_anneal_weight ramps linearly and saturates") {
  CHECK(kl_anneal_weight(0, 10) == doctest::Approx(0.0));
  CHECK(kl_anneal_weight(5, 10) == doctest::Approx(0.5));
  CHECK(kl_anneal_weight(100, 10) == doctest::Approx(1.0));
  CHECK(kl_anneal_weight(3, 0) == doctest::Approx(1.0));
  CHECK(kl_anneal_weight(3, -2) == doctest::Approx(1.0));
}

TEST_CASE("random graphs: gradients match FD for 20 seeds") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Var w1 = parameter(random_tensor({4, 5}, rng, 0.6));
    Var b1 = parameter(random_tensor({5}, rng, 0.3));
    Var w2 = parameter(random_tensor({5, 3}, rng, 0.6));
    const Tensor x = random_tensor({2, 4}, rng);
    check_gradients({w1, b1, w2}, [&]() {
      Var h = tanh_op(add(matmul(constant(x), w1), b1));
      Var out = softmax_rows(matmul(h, w2));
      return sum_all(mul(out, log_op(add_scalar(out, 1e-3))));
    });
  }
}
