#include <cmath>

#include "c2f/pipeline.hpp"

namespace c2f::pipeline {

bool optimize_step(std::map<std::string, Tensor>& params, AdamState& state,
                   const AdamConfig& config,
                   const std::set<std::string>& frozen) {
  // Reject the whole step on any non-finite gradient so a single bad batch
  // cannot poison the moment buffers.
  for (const auto& [name, p] : params) {
    if (frozen.count(name) || !p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        ++state.rejected_steps;
        return false;
      }
    }
  }

  ++state.step;
  const double bias1 = 1.0 - std::pow(config.beta1, state.step);
  const double bias2 = 1.0 - std::pow(config.beta2, state.step);
  for (auto& [name, p] : params) {
    if (frozen.count(name) || !p.has_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    auto grad = p.grad();
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  return true;
}

}  // namespace c2f::pipeline
