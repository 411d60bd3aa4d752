// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "sbtm/special.hpp"

namespace sbtm {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument("autodiff: " + op + " shape mismatch " + a.shape_str() + " vs " +
                              b.shape_str());
}

Var make_node(std::string op, Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (!n->requires_grad) n->backprop = nullptr;
  return n;
}

Var unary_elementwise(const char* name, const Var& a, double (*f)(double),
                      double (*df)(double)) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = f(a->value[i]);
  return make_node(name, std::move(out), {a}, [df](Node& n) {
    Node& p = *n.parents[0];
    for (int64_t i = 0; i < n.value.size(); ++i) p.grad[i] += n.grad[i] * df(p.value[i]);
  });
}

}  // namespace

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = "const";
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = "param";
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_parameter = true;
  n->zero_grad();
  return n;
}

void backward(const Var& loss) {
  if (loss->value.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + loss->value.shape_str());
  // Post-order DFS over parent edges, reversed, gives a topological order in
  // which every node is seen before any of its inputs.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->zero_grad();
  // Constant parents still receive (ignored) accumulations; size their grads.
  for (Node* n : order)
    for (const auto& p : n->parents)
      if (!visited.count(p.get())) p->zero_grad();
  loss->grad.data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0]) shape_error("matmul", A, B);
  const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      const double av = A(i, l);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out(i, j) += av * B(l, j);
    }
  return make_node("matmul", std::move(out), {a, b}, [m, k, n](Node& nd) {
    Node& pa = *nd.parents[0];
    Node& pb = *nd.parents[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double g = nd.grad(i, j);
        if (g == 0.0) continue;
        for (int l = 0; l < k; ++l) {
          pa.grad(i, l) += g * pb.value(l, j);
          pb.grad(l, j) += g * pa.value(i, l);
        }
      }
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a->value;
  if (A.rank() != 2) throw std::invalid_argument("transpose: rank-2 input required");
  const int m = A.shape[0], n = A.shape[1];
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out(j, i) = A(i, j);
  return make_node("transpose", std::move(out), {a}, [m, n](Node& nd) {
    Node& p = *nd.parents[0];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) p.grad(i, j) += nd.grad(j, i);
  });
}

Var add(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.same_shape(B)) {
    Tensor out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
    return make_node("add", std::move(out), {a, b}, [](Node& nd) {
      for (int64_t i = 0; i < nd.value.size(); ++i) {
        nd.parents[0]->grad[i] += nd.grad[i];
        nd.parents[1]->grad[i] += nd.grad[i];
      }
    });
  }
  if (B.size() == 1) {
    Tensor out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out[i] = A[i] + B.data[0];
    return make_node("add", std::move(out), {a, b}, [](Node& nd) {
      for (int64_t i = 0; i < nd.value.size(); ++i) {
        nd.parents[0]->grad[i] += nd.grad[i];
        nd.parents[1]->grad.data[0] += nd.grad[i];
      }
    });
  }
  if (A.size() == 1) return add(b, a);
  if (A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0]) {
    const int r = A.shape[0], c = A.shape[1];
    Tensor out(A.shape);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out(i, j) = A(i, j) + B[j];
    return make_node("add", std::move(out), {a, b}, [r, c](Node& nd) {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          nd.parents[0]->grad(i, j) += nd.grad(i, j);
          nd.parents[1]->grad[j] += nd.grad(i, j);
        }
    });
  }
  shape_error("add", A, B);
}

Var sub(const Var& a, const Var& b) { return add(a, mul_scalar(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.same_shape(B)) {
    Tensor out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
    return make_node("mul", std::move(out), {a, b}, [](Node& nd) {
      Node& pa = *nd.parents[0];
      Node& pb = *nd.parents[1];
      for (int64_t i = 0; i < nd.value.size(); ++i) {
        pa.grad[i] += nd.grad[i] * pb.value[i];
        pb.grad[i] += nd.grad[i] * pa.value[i];
      }
    });
  }
  if (B.size() == 1) {
    Tensor out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out[i] = A[i] * B.data[0];
    return make_node("mul", std::move(out), {a, b}, [](Node& nd) {
      Node& pa = *nd.parents[0];
      Node& pb = *nd.parents[1];
      for (int64_t i = 0; i < nd.value.size(); ++i) {
        pa.grad[i] += nd.grad[i] * pb.value.data[0];
        pb.grad.data[0] += nd.grad[i] * pa.value[i];
      }
    });
  }
  if (A.size() == 1) return mul(b, a);
  shape_error("mul", A, B);
}

Var divide(const Var& a, const Var& b) { return mul(a, reciprocal(b)); }

Var add_scalar(const Var& a, double c) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = a->value[i] + c;
  return make_node("add_scalar", std::move(out), {a}, [](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i) nd.parents[0]->grad[i] += nd.grad[i];
  });
}

Var mul_scalar(const Var& a, double c) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = a->value[i] * c;
  return make_node("mul_scalar", std::move(out), {a}, [c](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i) nd.parents[0]->grad[i] += nd.grad[i] * c;
  });
}

Var reciprocal(const Var& a) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = 1.0 / a->value[i];
  return make_node("reciprocal", std::move(out), {a}, [](Node& nd) {
    Node& p = *nd.parents[0];
    for (int64_t i = 0; i < nd.value.size(); ++i)
      p.grad[i] -= nd.grad[i] * nd.value[i] * nd.value[i];
  });
}

Var exp_op(const Var& a) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = std::exp(a->value[i]);
  return make_node("exp", std::move(out), {a}, [](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i)
      nd.parents[0]->grad[i] += nd.grad[i] * nd.value[i];
  });
}

Var log_op(const Var& a) {
  return unary_elementwise(
      "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var softplus(const Var& a) {
  // log(1 + e^x), computed stably.
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) {
    const double x = a->value[i];
    out[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return make_node("softplus", std::move(out), {a}, [](Node& nd) {
    Node& p = *nd.parents[0];
    for (int64_t i = 0; i < nd.value.size(); ++i)
      p.grad[i] += nd.grad[i] / (1.0 + std::exp(-p.value[i]));
  });
}

Var relu(const Var& a) {
  return unary_elementwise(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var logistic(const Var& a) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
  return make_node("logistic", std::move(out), {a}, [](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i) {
      const double y = nd.value[i];
      nd.parents[0]->grad[i] += nd.grad[i] * y * (1.0 - y);
    }
  });
}

Var tanh_op(const Var& a) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = std::tanh(a->value[i]);
  return make_node("tanh", std::move(out), {a}, [](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i) {
      const double y = nd.value[i];
      nd.parents[0]->grad[i] += nd.grad[i] * (1.0 - y * y);
    }
  });
}

Var lgamma_op(const Var& a) {
  return unary_elementwise(
      "lgamma", a, [](double x) { return std::lgamma(x); },
      [](double x) { return digamma(x); });
}

Var digamma_op(const Var& a) {
  return unary_elementwise(
      "digamma", a, [](double x) { return digamma(x); },
      [](double x) { return trigamma(x); });
}

Var clamp_min(const Var& a, double lo) {
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) out[i] = std::max(a->value[i], lo);
  return make_node("clamp_min", std::move(out), {a}, [lo](Node& nd) {
    Node& p = *nd.parents[0];
    for (int64_t i = 0; i < nd.value.size(); ++i)
      if (p.value[i] > lo) p.grad[i] += nd.grad[i];
  });
}

namespace {

void softmax_row(const double* x, double* y, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (int i = 0; i < n; ++i) y[i] /= sum;
}

}  // namespace

Var softmax_rows(const Var& a) {
  const Tensor& A = a->value;
  if (A.rank() < 1 || A.rank() > 2) throw std::invalid_argument("softmax: rank-1/2 input required");
  const int r = A.rows(), c = A.cols();
  Tensor out(A.shape);
  for (int i = 0; i < r; ++i) softmax_row(&A.data[int64_t(i) * c], &out.data[int64_t(i) * c], c);
  return make_node("softmax", std::move(out), {a}, [r, c](Node& nd) {
    Node& p = *nd.parents[0];
    for (int i = 0; i < r; ++i) {
      const double* y = &nd.value.data[int64_t(i) * c];
      const double* g = &nd.grad.data[int64_t(i) * c];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      for (int j = 0; j < c; ++j) p.grad.data[int64_t(i) * c + j] += (g[j] - dot) * y[j];
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& A = a->value;
  if (A.rank() < 1 || A.rank() > 2)
    throw std::invalid_argument("log_softmax: rank-1/2 input required");
  const int r = A.rows(), c = A.cols();
  Tensor out(A.shape);
  for (int i = 0; i < r; ++i) {
    const double* x = &A.data[int64_t(i) * c];
    double* y = &out.data[int64_t(i) * c];
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  return make_node("log_softmax", std::move(out), {a}, [r, c](Node& nd) {
    Node& p = *nd.parents[0];
    for (int i = 0; i < r; ++i) {
      const double* y = &nd.value.data[int64_t(i) * c];
      const double* g = &nd.grad.data[int64_t(i) * c];
      double gsum = 0.0;
      for (int j = 0; j < c; ++j) gsum += g[j];
      for (int j = 0; j < c; ++j)
        p.grad.data[int64_t(i) * c + j] += g[j] - gsum * std::exp(y[j]);
    }
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node("sum", Tensor::scalar(s), {a}, [](Node& nd) {
    const double g = nd.grad.data[0];
    for (int64_t i = 0; i < nd.parents[0]->value.size(); ++i) nd.parents[0]->grad[i] += g;
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.size());
  return mul_scalar(sum_all(a), inv);
}

Var sum_rows(const Var& a) {
  const Tensor& A = a->value;
  if (A.rank() != 2) throw std::invalid_argument("sum_rows: rank-2 input required");
  const int r = A.shape[0], c = A.shape[1];
  Tensor out({c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j] += A(i, j);
  return make_node("sum_rows", std::move(out), {a}, [r, c](Node& nd) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) nd.parents[0]->grad(i, j) += nd.grad[j];
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 2 || B.rank() != 2 || A.shape[0] != B.shape[0]) shape_error("concat", A, B);
  const int r = A.shape[0], ca = A.shape[1], cb = B.shape[1];
  Tensor out({r, ca + cb});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j) out(i, j) = A(i, j);
    for (int j = 0; j < cb; ++j) out(i, ca + j) = B(i, j);
  }
  return make_node("concat", std::move(out), {a, b}, [r, ca, cb](Node& nd) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < ca; ++j) nd.parents[0]->grad(i, j) += nd.grad(i, j);
      for (int j = 0; j < cb; ++j) nd.parents[1]->grad(i, j) += nd.grad(i, ca + j);
    }
  });
}

Var slice_cols(const Var& a, int lo, int hi) {
  const Tensor& A = a->value;
  if (A.rank() != 2 || lo < 0 || hi > A.shape[1] || lo >= hi)
    throw std::invalid_argument("slice: bad range [" + std::to_string(lo) + "," +
                                std::to_string(hi) + ") for " + A.shape_str());
  const int r = A.shape[0], w = hi - lo;
  Tensor out({r, w});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j) out(i, j) = A(i, lo + j);
  return make_node("slice", std::move(out), {a}, [r, w, lo](Node& nd) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j) nd.parents[0]->grad(i, lo + j) += nd.grad(i, j);
  });
}

Var tile_rows(const Var& a, int n) {
  const Tensor& A = a->value;
  if (A.rank() != 2 || A.shape[0] != 1) throw std::invalid_argument("tile_rows: [1,c] input required");
  const int c = A.shape[1];
  Tensor out({n, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out(i, j) = A(0, j);
  return make_node("tile_rows", std::move(out), {a}, [n, c](Node& nd) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) nd.parents[0]->grad(0, j) += nd.grad(i, j);
  });
}

Var embedding_rows(const Var& table, const std::vector<int>& idx) {
  const Tensor& T = table->value;
  if (T.rank() != 2) throw std::invalid_argument("embedding: rank-2 table required");
  const int c = T.shape[1];
  Tensor out({static_cast<int>(idx.size()), c});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= T.shape[0])
      throw std::out_of_range("embedding: index " + std::to_string(idx[i]));
    for (int j = 0; j < c; ++j) out(static_cast<int>(i), j) = T(idx[i], j);
  }
  return make_node("embedding", std::move(out), {table}, [idx, c](Node& nd) {
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j)
        nd.parents[0]->grad(idx[i], j) += nd.grad(static_cast<int>(i), j);
  });
}

Var dropout(const Var& a, double rate, bool train, NoiseSource& noise) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(a->value.size());
  Tensor out(a->value.shape);
  for (int64_t i = 0; i < a->value.size(); ++i) {
    (*mask)[i] = noise.uniform() < rate ? 0.0 : 1.0 / keep;
    out[i] = a->value[i] * (*mask)[i];
  }
  return make_node("dropout", std::move(out), {a}, [mask](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i)
      nd.parents[0]->grad[i] += nd.grad[i] * (*mask)[i];
  });
}

Var stick_break_rows(const Var& v) {
  const Tensor& V = v->value;
  if (V.rank() < 1 || V.rank() > 2) throw std::invalid_argument("stick_break: rank-1/2 input");
  const int r = V.rows(), m = V.cols();
  Tensor out(V.rank() == 2 ? std::vector<int>{r, m + 1} : std::vector<int>{m + 1});
  for (int i = 0; i < r; ++i) {
    const double* vi = &V.data[int64_t(i) * m];
    double* pi = &out.data[int64_t(i) * (m + 1)];
    double rest = 1.0;
    for (int k = 0; k < m; ++k) {
      pi[k] = vi[k] * rest;
      rest *= 1.0 - vi[k];
    }
    pi[m] = rest;
  }
  return make_node("stick_break", std::move(out), {v}, [r, m](Node& nd) {
    Node& p = *nd.parents[0];
    for (int i = 0; i < r; ++i) {
      const double* vi = &p.value.data[int64_t(i) * m];
      const double* pi = &nd.value.data[int64_t(i) * (m + 1)];
      const double* g = &nd.grad.data[int64_t(i) * (m + 1)];
      double* dv = &p.grad.data[int64_t(i) * m];
      // d pi_k / d v_k = pi_k / v_k; d pi_k / d v_j = -pi_k / (1 - v_j) for j < k.
      for (int k = 0; k < m; ++k) {
        double prefix = 1.0;
        for (int j = 0; j < k; ++j) prefix *= 1.0 - vi[j];
        dv[k] += g[k] * prefix;
      }
      for (int j = 0; j < m; ++j) {
        const double om = 1.0 - vi[j];
        double acc = 0.0;
        for (int k = j + 1; k <= m; ++k) acc += g[k] * pi[k];
        dv[j] -= acc / om;
      }
    }
  });
}

namespace {

constexpr double kSampleClamp = 1e-6;
constexpr double kMinShape = 1e-3;

// d z / d shape for a unit-rate Gamma draw, by implicit differentiation of
// the CDF: dz/dshape = -(dP/dshape)/pdf(z). dP/dshape uses a central finite
// difference with step 1e-5 * max(1, shape).
double gamma_dz_dshape(double shape, double z) {
  const double h = 1e-5 * std::max(1.0, shape);
  const double dF = (reg_inc_gamma(shape + h, z) - reg_inc_gamma(shape - h, z)) / (2.0 * h);
  const double pdf = std::exp(gamma_log_pdf_unit_rate(shape, z));
  return -dF / pdf;
}

}  // namespace

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
              Tensor& running_var, bool train, double momentum, double eps) {
  const Tensor& X = x->value;
  if (X.rank() != 2) throw std::invalid_argument("batchnorm: rank-2 input required");
  const int B = X.shape[0], F = X.shape[1];
  if (gamma->value.size() != F || beta->value.size() != F ||
      running_mean.size() != F || running_var.size() != F)
    throw std::invalid_argument("batchnorm: feature size mismatch for " + X.shape_str());

  Tensor out({B, F});
  if (!train) {
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < F; ++j) {
        const double xhat = (X(i, j) - running_mean[j]) / std::sqrt(running_var[j] + eps);
        out(i, j) = gamma->value[j] * xhat + beta->value[j];
      }
    Tensor rm = running_mean, rv = running_var;
    return make_node("batchnorm", std::move(out), {x, gamma, beta},
                     [B, F, rm, rv, eps](Node& nd) {
                       Node& px = *nd.parents[0];
                       Node& pg = *nd.parents[1];
                       Node& pb = *nd.parents[2];
                       for (int i = 0; i < B; ++i)
                         for (int j = 0; j < F; ++j) {
                           const double inv = 1.0 / std::sqrt(rv[j] + eps);
                           const double xhat = (px.value(i, j) - rm[j]) * inv;
                           px.grad(i, j) += nd.grad(i, j) * pg.value[j] * inv;
                           pg.grad[j] += nd.grad(i, j) * xhat;
                           pb.grad[j] += nd.grad(i, j);
                         }
                     });
  }

  auto mean = std::make_shared<std::vector<double>>(F, 0.0);
  auto var = std::make_shared<std::vector<double>>(F, 0.0);
  for (int j = 0; j < F; ++j) {
    double m = 0.0;
    for (int i = 0; i < B; ++i) m += X(i, j);
    m /= B;
    double v = 0.0;
    for (int i = 0; i < B; ++i) v += (X(i, j) - m) * (X(i, j) - m);
    v /= B;
    (*mean)[j] = m;
    (*var)[j] = v;
    running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * m;
    running_var[j] = momentum * running_var[j] + (1.0 - momentum) * v;
  }
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < F; ++j) {
      const double xhat = (X(i, j) - (*mean)[j]) / std::sqrt((*var)[j] + eps);
      out(i, j) = gamma->value[j] * xhat + beta->value[j];
    }
  return make_node("batchnorm", std::move(out), {x, gamma, beta},
                   [B, F, mean, var, eps](Node& nd) {
                     Node& px = *nd.parents[0];
                     Node& pg = *nd.parents[1];
                     Node& pb = *nd.parents[2];
                     for (int j = 0; j < F; ++j) {
                       const double inv = 1.0 / std::sqrt((*var)[j] + eps);
                       double sum_dy = 0.0, sum_dy_xhat = 0.0;
                       for (int i = 0; i < B; ++i) {
                         const double xhat = (px.value(i, j) - (*mean)[j]) * inv;
                         const double dy = nd.grad(i, j) * pg.value[j];
                         sum_dy += dy;
                         sum_dy_xhat += dy * xhat;
                         pg.grad[j] += nd.grad(i, j) * xhat;
                         pb.grad[j] += nd.grad(i, j);
                       }
                       for (int i = 0; i < B; ++i) {
                         const double xhat = (px.value(i, j) - (*mean)[j]) * inv;
                         const double dy = nd.grad(i, j) * pg.value[j];
                         px.grad(i, j) += inv * (dy - sum_dy / B - xhat * sum_dy_xhat / B);
                       }
                     }
                   });
}

Var beta_implicit_rows(const Var& a, const Var& b, NoiseSource& noise) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (!A.same_shape(B)) shape_error("beta_implicit", A, B);
  const int64_t n = A.size();
  Tensor out(A.shape);
  auto d_a = std::make_shared<std::vector<double>>(n);
  auto d_b = std::make_shared<std::vector<double>>(n);
  for (int64_t i = 0; i < n; ++i) {
    const double ai = A[i], bi = B[i];
    if (!(ai >= kMinShape) || !(bi >= kMinShape))
      throw std::domain_error("beta_implicit: shape below 1e-3 (or non-finite) is numerically unstable");
    // Draws underflow to zero for shapes near the floor; keep them on the
    // smallest normal so the implicit partials stay finite (they vanish).
    const double z1 = std::max(noise.gamma_unit(ai), 1e-300);
    const double z2 = std::max(noise.gamma_unit(bi), 1e-300);
    const double s = z1 + z2;
    out[i] = std::clamp(z1 / s, kSampleClamp, 1.0 - kSampleClamp);
    (*d_a)[i] = gamma_dz_dshape(ai, z1) * z2 / (s * s);
    (*d_b)[i] = -z1 * gamma_dz_dshape(bi, z2) / (s * s);
  }
  return make_node("beta_implicit", std::move(out), {a, b}, [d_a, d_b](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i) {
      nd.parents[0]->grad[i] += nd.grad[i] * (*d_a)[i];
      nd.parents[1]->grad[i] += nd.grad[i] * (*d_b)[i];
    }
  });
}

Var kumaraswamy_rows(const Var& a, const Var& b, NoiseSource& noise) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (!A.same_shape(B)) shape_error("kumaraswamy", A, B);
  const int64_t n = A.size();
  Tensor out(A.shape);
  auto d_a = std::make_shared<std::vector<double>>(n);
  auto d_b = std::make_shared<std::vector<double>>(n);
  for (int64_t i = 0; i < n; ++i) {
    const double ai = A[i], bi = B[i];
    const double u = noise.uniform();
    const double w = std::pow(u, 1.0 / bi);  // u^(1/b)
    const double y = 1.0 - w;
    const double x = std::pow(y, 1.0 / ai);
    out[i] = std::clamp(x, kSampleClamp, 1.0 - kSampleClamp);
    // Partials of the unclamped transform; the clamp only shields downstream logs.
    (*d_a)[i] = -x * std::log(y) / (ai * ai);
    (*d_b)[i] = std::pow(y, 1.0 / ai - 1.0) / ai * w * std::log(u) / (bi * bi);
  }
  return make_node("kumaraswamy", std::move(out), {a, b}, [d_a, d_b](Node& nd) {
    for (int64_t i = 0; i < nd.value.size(); ++i) {
      nd.parents[0]->grad[i] += nd.grad[i] * (*d_a)[i];
      nd.parents[1]->grad[i] += nd.grad[i] * (*d_b)[i];
    }
  });
}

}  // namespace sbtm
