// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace sbtm {

Tensor glorot_normal(int fan_in, int fan_out, std::vector<int> shape, Rng& rng) {
  const double std = std::sqrt(2.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
  return t;
}

Linear::Linear(int in, int out, Rng& rng) {
  W = parameter(glorot_normal(in, out, {in, out}, rng));
  b = parameter(Tensor::zeros({out}));
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".W", W);
  out.emplace_back(prefix + ".b", b);
}

BatchNorm::BatchNorm(int features) {
  gamma = parameter(Tensor::full({features}, 1.0));
  beta = parameter(Tensor::zeros({features}));
  running_mean = Tensor::zeros({features});
  running_var = Tensor::full({features}, 1.0);
}

void BatchNorm::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

Mlp::Mlp(int in, const std::vector<int>& hidden, bool use_batchnorm, double dropout,
         Rng& rng)
    : dropout_rate(dropout) {
  int prev = in;
  for (int h : hidden) {
    layers.emplace_back(prev, h, rng);
    if (use_batchnorm) norms.emplace_back(h);
    prev = h;
  }
}

Var Mlp::operator()(const Var& x, bool train, NoiseSource& noise) {
  Var h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (!norms.empty()) h = norms[i](h, train);
    h = relu(h);
  }
  return dropout(h, dropout_rate, train, noise);
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + ".l" + std::to_string(i), out);
    if (!norms.empty()) norms[i].collect(prefix + ".bn" + std::to_string(i), out);
  }
}

Lstm::Lstm(int input, int hidden, int n_layers, Rng& rng) {
  int in = input;
  for (int l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.hidden = hidden;
    layer.W = parameter(glorot_normal(in + hidden, 4 * hidden, {in + hidden, 4 * hidden}, rng));
    layer.b = parameter(Tensor::zeros({4 * hidden}));
    layers.push_back(std::move(layer));
    in = hidden;
  }
}

Lstm::State Lstm::initial_state(int batch) const {
  State s;
  for (const auto& layer : layers) {
    s.h.push_back(constant(Tensor::zeros({batch, layer.hidden})));
    s.c.push_back(constant(Tensor::zeros({batch, layer.hidden})));
  }
  return s;
}

Var lstm_cell(const Var& x, const Var& h, const Var& c, const Var& W, const Var& b, Var& c_out) {
  const int hidden = c->value.shape[1];
  const Var gates = add(matmul(concat_cols(x, h), W), b);
  const Var i = logistic(slice_cols(gates, 0, hidden));
  const Var f = logistic(slice_cols(gates, hidden, 2 * hidden));
  const Var g = tanh_op(slice_cols(gates, 2 * hidden, 3 * hidden));
  const Var o = logistic(slice_cols(gates, 3 * hidden, 4 * hidden));
  c_out = add(mul(f, c), mul(i, g));
  return mul(o, tanh_op(c_out));
}

Var Lstm::step(const Var& x, State& state) const {
  Var in = x;
  for (size_t l = 0; l < layers.size(); ++l) {
    Var c_next;
    in = lstm_cell(in, state.h[l], state.c[l], layers[l].W, layers[l].b, c_next);
    state.h[l] = in;
    state.c[l] = c_next;
  }
  return in;
}

void Lstm::collect(const std::string& prefix, ParamList& out) const {
  for (size_t l = 0; l < layers.size(); ++l) {
    out.emplace_back(prefix + ".l" + std::to_string(l) + ".W", layers[l].W);
    out.emplace_back(prefix + ".l" + std::to_string(l) + ".b", layers[l].b);
  }
}

}  // namespace sbtm
