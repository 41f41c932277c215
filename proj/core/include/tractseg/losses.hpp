// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tractseg/grid.hpp"
#include "tractseg/preprocess.hpp"
#include "tractseg/tensor.hpp"

namespace tractseg {

/// Blend weights of the combined objectives.
inline constexpr float kTverskyWeight = 0.4f;
inline constexpr float kComplementWeight = 0.6f;
/// Probabilities entering BCE are clamped to [kBceClamp, 1 - kBceClamp].
inline constexpr double kBceClamp = 1e-7;
/// Probabilities at or above this value count as foreground.
inline constexpr float kThreshold = 0.5f;

enum class LossTag {
  IoULoss,     // 1 - IoU
  BceTversky,  // 0.4 * Tversky + 0.6 * BCE
  IoUTversky,  // 0.4 * Tversky + 0.6 * (1 - IoU)
};

std::string_view to_string(LossTag tag);
/// Accepts the names printed by to_string plus lowercase/kebab variants
/// ("iou", "bce-tversky", "iou-tversky").
LossTag parse_loss_tag(std::string_view name);

struct LossKind {
  LossTag tag = LossTag::BceTversky;
  float tversky_alpha = 0.5f;  // weight on false positives
  float tversky_beta = 0.5f;   // weight on false negatives
  float smooth_eps = 1.0f;

  /// Throws ConfigError unless alpha, beta >= 0 and eps > 0.
  void validate() const;
};

// Soft (differentiable) forms. Inputs of rank 4 are reduced per (sample,
// channel), rank 3 per leading channel, anything else as a single group; the
// per-group values are then averaged. Gradients flow into `pred` only.

/// (sum p*t + eps) / (sum p + sum t - sum p*t + eps), averaged over groups.
Tensor iou_soft(const Tensor& pred, const Tensor& truth, float eps = 1.0f);

/// Mean binary cross-entropy with pred clamped to [1e-7, 1 - 1e-7].
Tensor bce(const Tensor& pred, const Tensor& truth);

/// 1 - (TP + eps) / (TP + alpha*FP + beta*FN + eps) with soft counts.
Tensor tversky_loss(const Tensor& pred, const Tensor& truth, float alpha, float beta,
                    float eps = 1.0f);

Tensor combined_loss(const LossKind& kind, const Tensor& pred, const Tensor& truth);

// Hard forms.

/// |A and B| / |A or B|; two empty masks score 1.
double iou_hard(const BinaryMask& a, const BinaryMask& b);

inline std::uint8_t threshold(float p) { return p >= kThreshold ? 1 : 0; }
BinaryMask threshold(const FloatGrid& probs);

enum class Split { Train, Validation };

std::string_view to_string(Split split);

/// Validation scores for one epoch.
struct MetricReport {
  std::array<double, kNumClasses> per_class_iou{};
  double mean_iou = 0.0;
  int epoch = 0;
  Split split = Split::Validation;
};

/// Fold of per-slice, per-class IoU values in a fixed order. Each class score
/// is the mean over slices; the report mean is the mean over classes.
class MetricAccumulator {
 public:
  void add(const std::array<double, kNumClasses>& slice_iou);
  std::size_t count() const noexcept { return count_; }
  MetricReport report(int epoch, Split split) const;

 private:
  std::array<double, kNumClasses> sums_{};
  std::size_t count_ = 0;
};

}  // namespace tractseg
