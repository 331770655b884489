#include "twodpo/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "twodpo/error.hpp"

namespace twodpo {

double cosine_rate(const AdamConfig& cfg, std::size_t step) {
  if (cfg.total_steps == 0 || step >= cfg.total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return std::max(0.0, cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "gradient has " + std::to_string(grads.size()) + " entries, parameters " +
                                       std::to_string(params.size()));
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  } else if (state.m.size() != params.size()) {
    fail(ErrorCode::ShapeMismatch, "optimizer state does not match the parameters");
  }
  const double lr = cosine_rate(cfg, state.step);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.epsilon);
  }
}

void optimize_step(PolicyParams& params, const PolicyParams& grads, OptimizerState& state,
                   const AdamConfig& cfg) {
  if (grads.shape() != params.shape()) fail(ErrorCode::ShapeMismatch, "gradient shape differs from the policy");
  adam_step(params.values(), grads.values(), state, cfg);
}

}  // namespace twodpo
