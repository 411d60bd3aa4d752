// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sbtm/rng.hpp"
#include "sbtm/tensor.hpp"

namespace sbtm {

// Reverse-mode tape node. A graph is an implicit DAG of shared_ptr-linked
// nodes; backward() topologically sorts the nodes reachable from the loss
// and visits each exactly once in reverse order. Nodes hold their inputs,
// so subgraphs are freed when the loss handle goes out of scope while
// parameter nodes live on in the model.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool is_parameter = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grads

  void zero_grad() {
    grad = Tensor::zeros(value.shape);
  }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

// Runs reverse-mode accumulation from a scalar loss into every
// requires_grad node reachable from it. Grads are zeroed first for
// intermediate nodes; parameter grads accumulate across calls until
// zero_grad is invoked on them.
void backward(const Var& loss);

// --- op set ---

Var matmul(const Var& a, const Var& b);                  // [m,k]x[k,n] -> [m,n]
Var transpose(const Var& a);                             // [m,n] -> [n,m]
Var add(const Var& a, const Var& b);                     // same shape, [r,c]+[c] row broadcast, or x+scalar node
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);                     // elementwise, same shape or one rank-0
Var divide(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var reciprocal(const Var& a);

Var exp_op(const Var& a);
Var log_op(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
Var logistic(const Var& a);
Var tanh_op(const Var& a);
Var lgamma_op(const Var& a);
Var digamma_op(const Var& a);
Var clamp_min(const Var& a, double lo);                  // gradient passes where not clamped

Var softmax_rows(const Var& a);                          // softmax along last axis
Var log_softmax_rows(const Var& a);
Var sum_all(const Var& a);                               // -> rank-0
Var mean_all(const Var& a);
Var sum_rows(const Var& a);                              // [r,c] -> [c], sums over rows

Var concat_cols(const Var& a, const Var& b);             // [r,ca]+[r,cb] -> [r,ca+cb]
Var slice_cols(const Var& a, int lo, int hi);            // [r,c] -> [r,hi-lo]
Var tile_rows(const Var& a, int n);                      // [1,c] -> [n,c]
Var embedding_rows(const Var& table, const std::vector<int>& idx);  // gather rows

// Inverted dropout; identity when train is false (draws nothing).
Var dropout(const Var& a, double rate, bool train, NoiseSource& noise);

// pi_k = v_k prod_{j<k}(1-v_j), k < n; pi_n = prod_j (1-v_j). [r,n] -> [r,n+1].
Var stick_break_rows(const Var& v);

// Batch normalization over the batch (row) axis of [B,F]. Training mode
// normalizes with batch statistics and updates the caller-owned running
// stats; eval mode uses the running stats and is deterministic.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
              Tensor& running_var, bool train, double momentum = 0.9, double eps = 1e-5);

// v ~ Beta(a, b) elementwise through two implicit-gradient Gamma draws.
Var beta_implicit_rows(const Var& a, const Var& b, NoiseSource& noise);

// x = (1 - u^(1/b))^(1/a) elementwise, u ~ Uniform(0,1); value clamped to
// [1e-6, 1-1e-6] before it reaches any downstream log.
Var kumaraswamy_rows(const Var& a, const Var& b, NoiseSource& noise);

}  // namespace sbtm
