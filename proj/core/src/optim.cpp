// SPDX-License-Identifier: Apache-2.0
#include "tractseg/optim.hpp"

#include <cmath>
#include <numbers>

#include "tractseg/error.hpp"

namespace tractseg {

double CosineSchedule::at(std::size_t t) const {
  if (t > epochs) {
    throw ConfigError("cosine schedule index " + std::to_string(t) + " outside [0, " +
                      std::to_string(epochs) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(epochs);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

AdamState AdamState::for_parameters(std::span<const NamedTensor> params, AdamHyper hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.numel(), 0.0f);
    s.second_moment.emplace_back(p.tensor.numel(), 0.0f);
  }
  return s;
}

void adam_step(std::span<NamedTensor> params, AdamState& state, float lr) {
  if (params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters but optimizer state for " +
                         std::to_string(state.first_moment.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.numel() != state.first_moment[i].size()) {
      throw DimensionError("adam_step: parameter '" + params[i].name + "' has " +
                           std::to_string(params[i].tensor.numel()) +
                           " elements, optimizer state has " +
                           std::to_string(state.first_moment[i].size()));
    }
  }
  ++state.step;
  const auto& h = state.hyper;
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(h.beta1), state.step));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(h.beta2), state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    const bool has = t.has_grad();
    auto g = has ? t.grad() : std::span<const float>{};
    auto w = t.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const float gk = has ? g[k] : 0.0f;
      m[k] = h.beta1 * m[k] + (1.0f - h.beta1) * gk;
      v[k] = h.beta2 * v[k] + (1.0f - h.beta2) * gk * gk;
      const float mhat = m[k] / bc1;
      const float vhat = v[k] / bc2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

}  // namespace tractseg
