#pragma once

#include <span>
#include <vector>

#include "twodpo/policy.hpp"

namespace twodpo {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t total_steps = 700;  // cosine decays to zero here
};

/// base * (1 + cos(pi * step / total)) / 2, clamped to zero past the end.
double cosine_rate(const AdamConfig& cfg, std::size_t step);

struct OptimizerState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  double rate(const AdamConfig& cfg) const { return cosine_rate(cfg, step); }
};

/// One Adam update at the current schedule rate; increments the step.
/// Throws Error(ShapeMismatch) if the sizes disagree.
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
               const AdamConfig& cfg);
void optimize_step(PolicyParams& params, const PolicyParams& grads, OptimizerState& state,
                   const AdamConfig& cfg);

}  // namespace twodpo
