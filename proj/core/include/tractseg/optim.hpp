// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tractseg/unet.hpp"

namespace tractseg {

/// Half-cosine decay from lr_init at t = 0 to lr_min at t = epochs, no restarts.
struct CosineSchedule {
  double lr_init = 5e-3;
  double lr_min = 0.0;
  std::size_t epochs = 80;

  /// Throws ConfigError when t > epochs.
  double at(std::size_t t) const;
};

struct AdamHyper {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// First/second moment estimates, one array per parameter.
struct AdamState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::uint64_t step = 0;
  AdamHyper hyper;

  static AdamState for_parameters(std::span<const NamedTensor> params, AdamHyper hyper = {});
};

/// One bias-corrected Adam update using each parameter's accumulated gradient
/// (a parameter without a gradient counts as zero gradient).
void adam_step(std::span<NamedTensor> params, AdamState& state, float lr);

}  // namespace tractseg
