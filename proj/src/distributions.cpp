// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sbtm/special.hpp"

namespace sbtm {

namespace {

constexpr double kSampleClamp = 1e-6;
constexpr double kMinShape = 1e-3;
constexpr double kEulerGamma = 0.57721566490153286;

void check_same_size(size_t a, size_t b, const char* who) {
  if (a != b) throw std::invalid_argument(std::string(who) + ": parameter sizes differ");
}

double gamma_dz_dshape(double shape, double z) {
  const double h = 1e-5 * std::max(1.0, shape);
  const double dF = (reg_inc_gamma(shape + h, z) - reg_inc_gamma(shape - h, z)) / (2.0 * h);
  return -dF / std::exp(gamma_log_pdf_unit_rate(shape, z));
}

}  // namespace

GradSample sample_gaussian_rbs(const GaussianParams& params, const std::vector<double>& noise) {
  check_same_size(params.mu.size(), params.log_var.size(), "sample_gaussian_rbs");
  check_same_size(params.mu.size(), noise.size(), "sample_gaussian_rbs");
  const size_t n = params.mu.size();
  GradSample out;
  out.value.resize(n);
  out.d_param_a.resize(n);
  out.d_param_b.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double sigma = std::exp(0.5 * params.log_var[i]);
    out.value[i] = params.mu[i] + sigma * noise[i];
    out.d_param_a[i] = 1.0;                        // dz/dmu
    out.d_param_b[i] = 0.5 * sigma * noise[i];     // dz/dlog_var
  }
  return out;
}

GradSample sample_kumaraswamy(const KumaraswamyParams& params, const std::vector<double>& noise) {
  check_same_size(params.a.size(), params.b.size(), "sample_kumaraswamy");
  check_same_size(params.a.size(), noise.size(), "sample_kumaraswamy");
  const size_t n = params.a.size();
  GradSample out;
  out.value.resize(n);
  out.d_param_a.resize(n);
  out.d_param_b.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double a = params.a[i], b = params.b[i], u = noise[i];
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("sample_kumaraswamy: noise must be in (0,1)");
    const double w = std::pow(u, 1.0 / b);
    const double y = 1.0 - w;
    const double x = std::pow(y, 1.0 / a);
    out.value[i] = std::clamp(x, kSampleClamp, 1.0 - kSampleClamp);
    out.d_param_a[i] = -x * std::log(y) / (a * a);
    out.d_param_b[i] = std::pow(y, 1.0 / a - 1.0) / a * w * std::log(u) / (b * b);
  }
  return out;
}

GradSample sample_gamma_implicit(const GammaParams& params, Rng& rng) {
  if (!(params.shape >= kMinShape))
    throw std::domain_error("sample_gamma_implicit: shape below 1e-3 (or non-finite) is numerically unstable");
  if (!(params.rate > 0.0)) throw std::domain_error("sample_gamma_implicit: rate must be positive");
  const double z_unit = std::max(rng.gamma_unit(params.shape), 1e-300);
  GradSample out;
  out.value = {z_unit / params.rate};
  out.d_param_a = {gamma_dz_dshape(params.shape, z_unit) / params.rate};
  out.d_param_b = {-z_unit / (params.rate * params.rate)};
  return out;
}

GradSample sample_beta_implicit(const BetaParams& params, Rng& rng) {
  check_same_size(params.a.size(), params.b.size(), "sample_beta_implicit");
  const size_t n = params.a.size();
  GradSample out;
  out.value.resize(n);
  out.d_param_a.resize(n);
  out.d_param_b.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double a = params.a[i], b = params.b[i];
    if (!(a >= kMinShape) || !(b >= kMinShape))
      throw std::domain_error("sample_beta_implicit: shape below 1e-3 (or non-finite) is numerically unstable");
    // Draws underflow to zero for shapes near the floor; keep them on the
    // smallest normal so the implicit partials stay finite (they vanish).
    const double z1 = std::max(rng.gamma_unit(a), 1e-300);
    const double z2 = std::max(rng.gamma_unit(b), 1e-300);
    const double s = z1 + z2;
    out.value[i] = std::clamp(z1 / s, kSampleClamp, 1.0 - kSampleClamp);
    out.d_param_a[i] = gamma_dz_dshape(a, z1) * z2 / (s * s);
    out.d_param_b[i] = -z1 * gamma_dz_dshape(b, z2) / (s * s);
  }
  return out;
}

StickWeights stick_break(const std::vector<double>& v) {
  StickWeights out;
  out.v = v;
  out.pi.resize(v.size() + 1);
  double rest = 1.0;
  for (size_t k = 0; k < v.size(); ++k) {
    out.pi[k] = v[k] * rest;
    rest *= 1.0 - v[k];
  }
  out.pi.back() = rest;
  return out;
}

std::vector<double> logistic_stick_prep(const std::vector<double>& theta) {
  std::vector<double> v(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-theta[i]));
  return v;
}

double kld_gaussian_gaussian(const GaussianParams& p, const GaussianParams& q) {
  check_same_size(p.mu.size(), p.log_var.size(), "kld_gaussian_gaussian");
  check_same_size(p.mu.size(), q.mu.size(), "kld_gaussian_gaussian");
  check_same_size(q.mu.size(), q.log_var.size(), "kld_gaussian_gaussian");
  double kl = 0.0;
  for (size_t i = 0; i < p.mu.size(); ++i) {
    const double vp = std::exp(p.log_var[i]);
    const double vq = std::exp(q.log_var[i]);
    const double dm = p.mu[i] - q.mu[i];
    kl += 0.5 * (q.log_var[i] - p.log_var[i] + (vp + dm * dm) / vq - 1.0);
  }
  return kl;
}

double kld_beta_beta(const BetaParams& p, const BetaParams& q) {
  check_same_size(p.a.size(), p.b.size(), "kld_beta_beta");
  check_same_size(p.a.size(), q.a.size(), "kld_beta_beta");
  check_same_size(q.a.size(), q.b.size(), "kld_beta_beta");
  double kl = 0.0;
  for (size_t i = 0; i < p.a.size(); ++i) {
    const double a = p.a[i], b = p.b[i], c = q.a[i], d = q.b[i];
    kl += log_beta_fn(c, d) - log_beta_fn(a, b) - (c - a) * digamma(a) - (d - b) * digamma(b) +
          (c - a + d - b) * digamma(a + b);
  }
  return kl;
}

double kld_gamma_gamma(const GammaParams& p, const GammaParams& q) {
  if (!(p.shape > 0.0 && p.rate > 0.0 && q.shape > 0.0 && q.rate > 0.0))
    throw std::domain_error("kld_gamma_gamma: parameters must be positive");
  return (p.shape - q.shape) * digamma(p.shape) - std::lgamma(p.shape) + std::lgamma(q.shape) +
         q.shape * (std::log(p.rate) - std::log(q.rate)) +
         p.shape * (q.rate - p.rate) / p.rate;
}

double kld_kumaraswamy_beta(const KumaraswamyParams& q, double prior_beta, int taylor_terms) {
  check_same_size(q.a.size(), q.b.size(), "kld_kumaraswamy_beta");
  if (!(prior_beta > 0.0)) throw std::domain_error("kld_kumaraswamy_beta: prior must be positive");
  if (taylor_terms < 1) throw std::invalid_argument("kld_kumaraswamy_beta: need at least one term");
  double kl = 0.0;
  for (size_t i = 0; i < q.a.size(); ++i) {
    const double a = q.a[i], b = q.b[i];
    double series = 0.0;
    for (int m = 1; m <= taylor_terms; ++m)
      series += std::exp(log_beta_fn(m / a, b)) / (m + a * b);
    kl += (a - 1.0) / a * (-kEulerGamma - digamma(b) - 1.0 / b) + std::log(a * b) +
          log_beta_fn(1.0, prior_beta) - (b - 1.0) / b + (prior_beta - 1.0) * b * series;
  }
  return kl;
}

double kld_beta_gem_printed(const BetaParams& q, double prior_beta) {
  check_same_size(q.a.size(), q.b.size(), "kld_beta_gem_printed");
  double kl = 0.0;
  for (size_t i = 0; i < q.a.size(); ++i) {
    const double a = q.a[i], b = q.b[i], beta = prior_beta;
    kl += log_beta_fn(a, b) - log_beta_fn(1.0, beta) - (a - 1.0) * digamma(1.0) -
          (b - beta) * digamma(beta) + (a - 1.0 + b - beta) * digamma(1.0 + beta);
  }
  return kl;
}

}  // namespace sbtm
