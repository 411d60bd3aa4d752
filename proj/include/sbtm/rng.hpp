// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sbtm/special.hpp"

namespace sbtm {

// Deterministic generator. All sampling routines are hand-rolled on top of
// raw mt19937_64 words so that streams are reproducible across platforms
// and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Uniform on (0, 1).
  double uniform() {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  // Standard normal via Box-Muller.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Unit-rate Gamma draw, Marsaglia-Tsang with the shape<1 boost.
  double gamma_unit(double shape) {
    if (!(shape > 0.0)) throw std::domain_error("Rng::gamma_unit: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma_unit(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // Poisson draw by accumulating Exp(1) arrivals; O(lambda) but exact.
  int poisson(double lambda) {
    if (!(lambda >= 0.0)) throw std::domain_error("Rng::poisson: lambda must be nonnegative");
    int k = 0;
    double acc = -std::log(uniform());
    while (acc <= lambda) {
      ++k;
      acc += -std::log(uniform());
    }
    return k;
  }

  uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Source of stochastic draws for a model forward pass. The recording /
// replaying pair makes a whole forward pass repeatable at fixed underlying
// noise, which is what finite-difference checks of reparameterized samples
// need: Gamma draws are recorded as their CDF value and replayed through the
// inverse CDF, so a replayed draw moves along the implicit path when the
// distribution parameters change.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual double normal() = 0;
  virtual double uniform() = 0;
  virtual double gamma_unit(double shape) = 0;
};

class RngNoise final : public NoiseSource {
 public:
  explicit RngNoise(Rng& rng) : rng_(rng) {}
  double normal() override { return rng_.normal(); }
  double uniform() override { return rng_.uniform(); }
  double gamma_unit(double shape) override { return rng_.gamma_unit(shape); }

 private:
  Rng& rng_;
};

class RecordingNoise final : public NoiseSource {
 public:
  explicit RecordingNoise(Rng& rng) : rng_(rng) {}
  double normal() override {
    const double z = rng_.normal();
    tape_.push_back(z);
    return z;
  }
  double uniform() override {
    const double u = rng_.uniform();
    tape_.push_back(u);
    return u;
  }
  double gamma_unit(double shape) override {
    const double z = rng_.gamma_unit(shape);
    tape_.push_back(reg_inc_gamma(shape, z));
    return z;
  }
  const std::vector<double>& tape() const { return tape_; }

 private:
  Rng& rng_;
  std::vector<double> tape_;
};

class ReplayNoise final : public NoiseSource {
 public:
  explicit ReplayNoise(const std::vector<double>& tape) : tape_(tape) {}
  double normal() override { return next(); }
  double uniform() override { return next(); }
  double gamma_unit(double shape) override { return reg_inc_gamma_inv(shape, next()); }
  void rewind() { pos_ = 0; }

 private:
  double next() {
    if (pos_ >= tape_.size()) throw std::runtime_error("ReplayNoise: tape exhausted");
    return tape_[pos_++];
  }
  const std::vector<double>& tape_;
  size_t pos_ = 0;
};

}  // namespace sbtm
