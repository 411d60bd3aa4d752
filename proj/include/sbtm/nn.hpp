// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sbtm/autodiff.hpp"
#include "sbtm/rng.hpp"
#include "sbtm/tensor.hpp"

namespace sbtm {

// Named parameter list; the order is the serialization order.
using ParamList = std::vector<std::pair<std::string, Var>>;

Tensor glorot_normal(int fan_in, int fan_out, std::vector<int> shape, Rng& rng);

struct Linear {
  Var W;  // [in, out]
  Var b;  // [out]

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  Var operator()(const Var& x) const { return add(matmul(x, W), b); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm {
  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;

  BatchNorm() = default;
  explicit BatchNorm(int features);
  Var operator()(const Var& x, bool train) {
    return batchnorm(x, gamma, beta, running_mean, running_var, train);
  }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Two-hidden-layer (by default) perceptron body: linear -> [batchnorm] ->
// relu per hidden layer, dropout on the final hidden representation.
struct Mlp {
  std::vector<Linear> layers;
  std::vector<BatchNorm> norms;  // empty when batchnorm is off
  double dropout_rate = 0.0;

  Mlp() = default;
  Mlp(int in, const std::vector<int>& hidden, bool use_batchnorm, double dropout_rate, Rng& rng);
  Var operator()(const Var& x, bool train, NoiseSource& noise);
  int out_dim() const { return layers.empty() ? 0 : layers.back().W->value.shape[1]; }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Stacked LSTM. Each layer owns a fused gate map [in+hidden, 4*hidden] with
// gate order (input, forget, cell, output).
struct Lstm {
  struct Layer {
    Var W;  // [in + hidden, 4*hidden]
    Var b;  // [4*hidden]
    int hidden = 0;
  };
  std::vector<Layer> layers;

  Lstm() = default;
  Lstm(int input, int hidden, int n_layers, Rng& rng);

  struct State {
    std::vector<Var> h;
    std::vector<Var> c;
  };
  State initial_state(int batch) const;
  // One time step; returns the top layer's hidden state.
  Var step(const Var& x, State& state) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Single fused LSTM cell update on explicit tensors; step() above uses the
// same arithmetic through the graph ops.
Var lstm_cell(const Var& x, const Var& h, const Var& c, const Var& W, const Var& b, Var& c_out);

}  // namespace sbtm
