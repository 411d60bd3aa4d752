// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cmath>
#include <stdexcept>

namespace sbtm {

// Digamma function Psi(x) for x > 0. Absolute error below 1e-12 on [1e-3, 1e3].
double digamma(double x);

// Trigamma function Psi'(x) for x > 0.
double trigamma(double x);

// log Beta function log B(a, b), a, b > 0.
double log_beta_fn(double a, double b);

// Regularized lower incomplete gamma P(shape, x) in [0, 1].
double reg_inc_gamma(double shape, double x);

// Inverse of P(shape, .): smallest z with P(shape, z) = p, by bracketed bisection.
double reg_inc_gamma_inv(double shape, double p);

// Unit-rate Gamma log-density at z > 0.
double gamma_log_pdf_unit_rate(double shape, double z);

inline double log_gamma_fn(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma_fn: argument must be positive");
  return std::lgamma(x);
}

}  // namespace sbtm
