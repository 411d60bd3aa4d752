// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <vector>

#include "sbtm/autodiff.hpp"
#include "sbtm/tensor.hpp"

namespace sbtm {

// Adam with decoupled weight decay (param -= lr * wd * param, applied after
// the moment update).
struct Adam {
  double learning_rate = 0.002;
  double beta1 = 0.95;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  int64_t step_count = 0;

  std::vector<Var> params;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  explicit Adam(std::vector<Var> parameters, double lr = 0.002, double b1 = 0.95,
                double b2 = 0.99, double wd = 0.0);

  void zero_grad();
  void step();
};

// Scales all gradients uniformly so their concatenated L2 norm is at most
// max_norm; returns the scale that was applied.
double clip_gradients(const std::vector<Var>& params, double max_norm);

// Linear warmup min(1, epoch / warmup); constant 1 when warmup <= 0.
double kl_anneal_weight(int epoch, int warmup_epochs);

}  // namespace sbtm
