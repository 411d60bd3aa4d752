// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <vector>

#include "sbtm/rng.hpp"

namespace sbtm {

struct GaussianParams {
  std::vector<double> mu;
  std::vector<double> log_var;
};

struct BetaParams {
  std::vector<double> a;
  std::vector<double> b;
};

struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;
};

struct KumaraswamyParams {
  std::vector<double> a;
  std::vector<double> b;
};

// Mixture weights on the simplex together with the raw break fractions that
// produced them. pi has one more entry than v: the last weight is the
// leftover stick, so pi is a proper distribution at finite truncation.
struct StickWeights {
  std::vector<double> pi;
  std::vector<double> v;
};

// A sample together with its partial derivatives with respect to the two
// distribution parameters, taken at fixed underlying noise. d_param_a /
// d_param_b refer to (mu, log_var), (a, b) or (shape, rate) depending on
// the sampler.
struct GradSample {
  std::vector<double> value;
  std::vector<double> d_param_a;
  std::vector<double> d_param_b;
};

GradSample sample_gaussian_rbs(const GaussianParams& params, const std::vector<double>& noise);

// noise entries must lie in (0, 1). Values are clamped to [1e-6, 1-1e-6]
// so downstream logs stay finite; partials are those of the unclamped
// transform.
GradSample sample_kumaraswamy(const KumaraswamyParams& params, const std::vector<double>& noise);

// Implicit reparameterization: dz/dshape = -(dF/dshape)/pdf(z) at the drawn
// z (unit rate), then scaled; dz/drate = -z/rate. Shapes below 1e-3 are
// rejected.
GradSample sample_gamma_implicit(const GammaParams& params, Rng& rng);

// x = g1/(g1+g2) from two implicit unit-rate Gamma draws, partials by chain rule.
GradSample sample_beta_implicit(const BetaParams& params, Rng& rng);

StickWeights stick_break(const std::vector<double>& v);

std::vector<double> logistic_stick_prep(const std::vector<double>& theta);

// All KLs take the variational distribution first and the prior second and
// return the sum over components.

double kld_gaussian_gaussian(const GaussianParams& p, const GaussianParams& q);

// KL(Beta(a,b) || Beta(c,d)) = log B(c,d)/B(a,b) - (c-a)Psi(a) - (d-b)Psi(b)
//                              + (c-a+d-b)Psi(a+b)
double kld_beta_beta(const BetaParams& p, const BetaParams& q);

double kld_gamma_gamma(const GammaParams& p, const GammaParams& q);

// Truncated-series KL between Kumaraswamy(a,b) and Beta(1, prior_beta);
// taylor_terms is the number of series terms kept.
double kld_kumaraswamy_beta(const KumaraswamyParams& q, double prior_beta, int taylor_terms);

// Literal form of the per-stick GEM KL as printed alongside the EDP
// objective. It disagrees with the general Beta-Beta formula (digammas are
// evaluated at the prior's parameters); kept only for auditing behind the
// audit_printed_edp_kl switch, never used in training objectives.
double kld_beta_gem_printed(const BetaParams& q, double prior_beta);

inline constexpr int kDefaultTaylorTerms = 10;

}  // namespace sbtm
