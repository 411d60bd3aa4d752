// Apache License, Version 2.0, refer to LICENSE.txt
//
// Shared finite-difference harness for whole-model ELBO gradients at fixed
// noise. Gamma draws replay through the inverse CDF, so the difference path
// follows the implicit reparameterization.
#pragma once

#include <cmath>
#include <string>

#include "oracles.hpp"
#include "sbtm/model.hpp"

namespace gradcheck {

struct Report {
  double max_rel_err = 0.0;
  std::string worst_group;
  int64_t checked = 0;
};

inline Report model_gradient_report(sbtm::TopicModel& model, const sbtm::Batch& batch,
                                    uint64_t noise_seed) {
  using namespace sbtm;
  Rng rng(noise_seed);
  RecordingNoise rec(rng);
  ForwardResult base = forward_batch(model, batch, rec, true, 1.0, 1.0);
  ParamList named = model.parameters();
  for (auto& [name, p] : named) p->zero_grad();
  backward(base.annealed_elbo);
  std::vector<Tensor> grads;
  for (auto& [name, p] : named) grads.push_back(p->grad);

  Report report;
  for (size_t pi = 0; pi < named.size(); ++pi) {
    Var p = named[pi].second;
    for (int64_t j = 0; j < p->value.size(); ++j) {
      const double orig = p->value[j];
      const double h = 1e-4 * std::max(1.0, std::fabs(orig));
      p->value[j] = orig + h;
      ReplayNoise up_noise(rec.tape());
      const double up =
          forward_batch(model, batch, up_noise, true, 1.0, 1.0).annealed_elbo->value.data[0];
      p->value[j] = orig - h;
      ReplayNoise dn_noise(rec.tape());
      const double dn =
          forward_batch(model, batch, dn_noise, true, 1.0, 1.0).annealed_elbo->value.data[0];
      p->value[j] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double err = oracles::rel_err(grads[pi][j], fd, 1e-4);
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_group = named[pi].first;
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace gradcheck
