// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "tractseg/tensor.hpp"

namespace tractseg {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation (no kernel flip).
///
/// input  [B, Cin, H, W]
/// weight [Cout, Cin / groups, kH, kW]
/// bias   [Cout] or undefined
/// result [B, Cout, (H + 2p - kH) / s + 1, (W + 2p - kW) / s + 1]
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options = {});

/// Transposed convolution without padding. The weight layout is
/// [Cin, Cout, kH, kW], i.e. the same array a conv2d mapping Cout -> Cin would
/// use, which makes this op the exact adjoint of that conv2d.
///
/// result [B, Cout, (H - 1) * stride + kH, (W - 1) * stride + kW]
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, std::size_t stride);

/// 2x2 max pooling with stride 2. Ties route the gradient to the first cell in
/// row-major scan order. Odd spatial sizes are rejected.
Tensor maxpool2d(const Tensor& input);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);

/// Stacks b's channels after a's. Both must be [B, *, H, W] with equal B, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Per-channel statistics carried across training steps. Not trained.
struct RunningStats {
  Tensor mean;  // [C]
  Tensor var;   // [C]

  static RunningStats init(std::size_t channels);
};

struct BatchNormOptions {
  float momentum = 0.1f;
  float eps = 1e-5f;
};

/// Batch normalization over [B, C, H, W]. In training mode the batch
/// statistics normalize the input and are folded into `stats` (unbiased
/// variance); in evaluation mode `stats` is used as-is and left untouched.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   RunningStats& stats, bool training, BatchNormOptions options = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
/// value - a
Tensor rsub(float value, const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace tractseg
