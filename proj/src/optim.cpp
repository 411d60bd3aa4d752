// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/optim.hpp"

#include <cmath>

namespace sbtm {

Adam::Adam(std::vector<Var> parameters, double lr, double b1, double b2, double wd)
    : learning_rate(lr), beta1(b1), beta2(b2), weight_decay(wd), params(std::move(parameters)) {
  for (const auto& p : params) {
    m.push_back(Tensor::zeros(p->value.shape));
    v.push_back(Tensor::zeros(p->value.shape));
  }
}

void Adam::zero_grad() {
  for (auto& p : params) p->zero_grad();
}

void Adam::step() {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    Node& p = *params[i];
    for (int64_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
      const double mhat = m[i][j] / bc1;
      const double vhat = v[i][j] / bc2;
      p.value[j] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
      p.value[j] -= learning_rate * weight_decay * p.value[j];
    }
  }
}

double clip_gradients(const std::vector<Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (int64_t j = 0; j < p->grad.size(); ++j) sq += p->grad[j] * p->grad[j];
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scale = max_norm / norm;
  for (const auto& p : params)
    for (int64_t j = 0; j < p->grad.size(); ++j) p->grad[j] *= scale;
  return scale;
}

double kl_anneal_weight(int epoch, int warmup_epochs) {
  if (warmup_epochs <= 0) return 1.0;
  const double w = static_cast<double>(epoch) / warmup_epochs;
  return w < 1.0 ? w : 1.0;
}

}  // namespace sbtm
