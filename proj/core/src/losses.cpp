// SPDX-License-Identifier: Apache-2.0
#include "tractseg/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "tractseg/ops.hpp"

namespace tractseg {

namespace {

struct Groups {
  std::size_t count;
  std::size_t size;
};

Groups groups_of(const Shape& s) {
  std::size_t g = 1;
  if (s.rank() == 4) {
    g = s[0] * s[1];
  } else if (s.rank() == 3) {
    g = s[0];
  }
  return {g, s.numel() / g};
}

void require_pair(const Tensor& pred, const Tensor& truth, const char* what) {
  if (pred.shape() != truth.shape()) {
    throw DimensionError(std::string(what) + ": pred " + pred.shape().str() +
                         " and truth " + truth.shape().str() + " differ");
  }
}

}  // namespace

std::string_view to_string(LossTag tag) {
  switch (tag) {
    case LossTag::IoULoss:
      return "IoULoss";
    case LossTag::BceTversky:
      return "BceTversky";
    case LossTag::IoUTversky:
      return "IoUTversky";
  }
  return "?";
}

LossTag parse_loss_tag(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c != '-' && c != '_' && c != '+' && c != ' ') {
      key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (key == "iouloss" || key == "iou") return LossTag::IoULoss;
  if (key == "bcetversky" || key == "tverskybce") return LossTag::BceTversky;
  if (key == "ioutversky" || key == "tverskyiou") return LossTag::IoUTversky;
  throw ConfigError("unknown loss '" + std::string(name) +
                    "' (expected IoULoss, BceTversky or IoUTversky)");
}

void LossKind::validate() const {
  if (!(tversky_alpha >= 0.0f) || !(tversky_beta >= 0.0f)) {
    throw ConfigError("tversky alpha and beta must be >= 0");
  }
  if (!(smooth_eps > 0.0f)) throw ConfigError("smoothing eps must be > 0");
}

Tensor iou_soft(const Tensor& pred, const Tensor& truth, float eps) {
  require_pair(pred, truth, "iou_soft");
  const auto [ng, gs] = groups_of(pred.shape());
  auto p = pred.data();
  auto t = truth.data();
  std::vector<double> inter(ng), uni(ng);
  double total = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    double i_sum = 0.0, p_sum = 0.0, t_sum = 0.0;
    for (std::size_t k = g * gs; k < (g + 1) * gs; ++k) {
      i_sum += static_cast<double>(p[k]) * t[k];
      p_sum += p[k];
      t_sum += t[k];
    }
    inter[g] = i_sum + eps;
    uni[g] = p_sum + t_sum - i_sum + eps;
    total += inter[g] / uni[g];
  }
  auto p_impl = pred.impl();
  auto t_impl = truth.impl();
  return detail::make_result(
      "iou_soft", Shape{1}, {static_cast<float>(total / ng)}, {pred},
      [=](std::span<const float> gy) {
        auto dp = p_impl->grad_buffer();
        const auto& tv = t_impl->data;
        const double scale = gy[0] / static_cast<double>(ng);
        for (std::size_t g = 0; g < ng; ++g) {
          const double u2 = uni[g] * uni[g];
          for (std::size_t k = g * gs; k < (g + 1) * gs; ++k) {
            const double d = (tv[k] * uni[g] - inter[g] * (1.0 - tv[k])) / u2;
            dp[k] += static_cast<float>(scale * d);
          }
        }
      });
}

Tensor bce(const Tensor& pred, const Tensor& truth) {
  require_pair(pred, truth, "bce");
  const auto [ng, gs] = groups_of(pred.shape());
  auto p = pred.data();
  auto t = truth.data();
  double total = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    double acc = 0.0;
    for (std::size_t k = g * gs; k < (g + 1) * gs; ++k) {
      const double pc = std::clamp(static_cast<double>(p[k]), kBceClamp, 1.0 - kBceClamp);
      acc -= t[k] * std::log(pc) + (1.0 - t[k]) * std::log(1.0 - pc);
    }
    total += acc / static_cast<double>(gs);
  }
  auto p_impl = pred.impl();
  auto t_impl = truth.impl();
  return detail::make_result(
      "bce", Shape{1}, {static_cast<float>(total / ng)}, {pred},
      [=](std::span<const float> gy) {
        auto dp = p_impl->grad_buffer();
        const auto& pv = p_impl->data;
        const auto& tv = t_impl->data;
        const double scale = gy[0] / (static_cast<double>(ng) * static_cast<double>(gs));
        for (std::size_t k = 0; k < pv.size(); ++k) {
          const double pk = pv[k];
          if (pk <= kBceClamp || pk >= 1.0 - kBceClamp) continue;
          dp[k] += static_cast<float>(scale * (-tv[k] / pk + (1.0 - tv[k]) / (1.0 - pk)));
        }
      });
}

Tensor tversky_loss(const Tensor& pred, const Tensor& truth, float alpha, float beta, float eps) {
  require_pair(pred, truth, "tversky_loss");
  const auto [ng, gs] = groups_of(pred.shape());
  auto p = pred.data();
  auto t = truth.data();
  std::vector<double> num(ng), den(ng);
  double total = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t k = g * gs; k < (g + 1) * gs; ++k) {
      const double pk = p[k], tk = t[k];
      tp += pk * tk;
      fp += pk * (1.0 - tk);
      fn += (1.0 - pk) * tk;
    }
    num[g] = tp + eps;
    den[g] = tp + alpha * fp + beta * fn + eps;
    total += 1.0 - num[g] / den[g];
  }
  auto p_impl = pred.impl();
  auto t_impl = truth.impl();
  const double a = alpha, b = beta;
  return detail::make_result(
      "tversky_loss", Shape{1}, {static_cast<float>(total / ng)}, {pred},
      [=](std::span<const float> gy) {
        auto dp = p_impl->grad_buffer();
        const auto& tv = t_impl->data;
        const double scale = gy[0] / static_cast<double>(ng);
        for (std::size_t g = 0; g < ng; ++g) {
          const double d2 = den[g] * den[g];
          for (std::size_t k = g * gs; k < (g + 1) * gs; ++k) {
            const double tk = tv[k];
            const double dnum = tk;
            const double dden = tk + a * (1.0 - tk) - b * tk;
            dp[k] += static_cast<float>(-scale * (dnum * den[g] - num[g] * dden) / d2);
          }
        }
      });
}

Tensor combined_loss(const LossKind& kind, const Tensor& pred, const Tensor& truth) {
  kind.validate();
  switch (kind.tag) {
    case LossTag::IoULoss:
      return rsub(1.0f, iou_soft(pred, truth, kind.smooth_eps));
    case LossTag::BceTversky: {
      Tensor tv = tversky_loss(pred, truth, kind.tversky_alpha, kind.tversky_beta, kind.smooth_eps);
      return add(scale(tv, kTverskyWeight), scale(bce(pred, truth), kComplementWeight));
    }
    case LossTag::IoUTversky: {
      Tensor tv = tversky_loss(pred, truth, kind.tversky_alpha, kind.tversky_beta, kind.smooth_eps);
      Tensor iou_term = rsub(1.0f, iou_soft(pred, truth, kind.smooth_eps));
      return add(scale(tv, kTverskyWeight), scale(iou_term, kComplementWeight));
    }
  }
  throw ConfigError("unhandled loss tag");
}

double iou_hard(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_dims(b)) {
    throw DimensionError("iou_hard: masks " + dims_str(a.height, a.width) + " and " +
                         dims_str(b.height, b.width) + " differ");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool x = a.values[i] != 0, y = b.values[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask threshold(const FloatGrid& probs) {
  BinaryMask out(probs.height, probs.width, 0);
  for (std::size_t i = 0; i < probs.values.size(); ++i) out.values[i] = threshold(probs.values[i]);
  return out;
}

std::string_view to_string(Split split) {
  return split == Split::Train ? "train" : "validation";
}

void MetricAccumulator::add(const std::array<double, kNumClasses>& slice_iou) {
  for (std::size_t k = 0; k < kNumClasses; ++k) sums_[k] += slice_iou[k];
  ++count_;
}

MetricReport MetricAccumulator::report(int epoch, Split split) const {
  MetricReport r;
  r.epoch = epoch;
  r.split = split;
  if (count_ == 0) return r;
  double total = 0.0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    r.per_class_iou[k] = sums_[k] / static_cast<double>(count_);
    total += r.per_class_iou[k];
  }
  r.mean_iou = total / static_cast<double>(kNumClasses);
  return r;
}

}  // namespace tractseg
