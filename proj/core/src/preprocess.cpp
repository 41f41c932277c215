// SPDX-License-Identifier: Apache-2.0
#include "tractseg/preprocess.hpp"

#include <algorithm>

namespace tractseg {

namespace {

AxisTransform pad_axis(std::size_t source, std::size_t target) {
  AxisTransform t;
  t.source = source;
  t.result = target;
  t.pad_before = (target - source) / 2;
  t.pad_after = target - source - t.pad_before;
  return t;
}

AxisTransform trim_axis(std::size_t source, std::size_t target, const std::vector<bool>& zero_line) {
  AxisTransform t;
  t.source = source;
  t.result = target;
  std::size_t lead = 0, trail = 0;
  bool prefer_lead = true;
  while (source - lead - trail > target) {
    const bool lead_ok = zero_line[lead];
    const bool trail_ok = zero_line[source - 1 - trail];
    if (!lead_ok && !trail_ok) break;
    const bool take_lead = prefer_lead ? lead_ok : !trail_ok;
    if (take_lead) {
      ++lead;
    } else {
      ++trail;
    }
    prefer_lead = !take_lead;
  }
  const std::size_t excess = source - lead - trail - target;
  t.crop_before = excess / 2;
  t.crop_after = excess - t.crop_before;
  t.trim_before = lead + t.crop_before;
  t.trim_after = trail + t.crop_after;
  return t;
}

void require_nonempty(const ImageU16& image, const char* what) {
  if (image.height == 0 || image.width == 0 || image.values.size() != image.height * image.width) {
    throw DimensionError(std::string(what) + ": image must be non-empty, got " +
                         dims_str(image.height, image.width));
  }
}

}  // namespace

TrimPadResult trim_and_pad(const ImageU16& image, std::size_t target) {
  require_nonempty(image, "trim_and_pad");
  if (target == 0) throw DimensionError("trim_and_pad: target must be positive");
  std::vector<bool> zero_row(image.height, true), zero_col(image.width, true);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      if (image.at(r, c) != 0) {
        zero_row[r] = false;
        zero_col[c] = false;
      }
    }
  }
  TrimPadRecord rec;
  rec.rows = image.height <= target ? pad_axis(image.height, target)
                                    : trim_axis(image.height, target, zero_row);
  rec.cols = image.width <= target ? pad_axis(image.width, target)
                                   : trim_axis(image.width, target, zero_col);
  return {apply_record(image, rec), rec};
}

TrimPadResult pad_to_minimum(const ImageU16& image, std::size_t target) {
  require_nonempty(image, "pad_to_minimum");
  auto axis = [target](std::size_t len) {
    if (len < target) return pad_axis(len, target);
    AxisTransform t;
    t.source = t.result = len;
    return t;
  };
  TrimPadRecord rec{axis(image.height), axis(image.width)};
  return {apply_record(image, rec), rec};
}

MaskTransformResult apply_record_to_mask(const BinaryMask& mask, const TrimPadRecord& rec) {
  MaskTransformResult res{apply_record(mask, rec), 0};
  res.dropped_pixels = popcount(mask) - popcount(res.mask);
  return res;
}

FloatGrid normalize(const ImageU16& image) {
  FloatGrid out(image.height, image.width, 0.0f);
  if (image.values.empty()) return out;
  auto [lo_it, hi_it] = std::minmax_element(image.values.begin(), image.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) return out;
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    out.values[i] = static_cast<float>((image.values[i] - lo) * inv);
  }
  return out;
}

SliceSample flip(const SliceSample& sample, FlipAxis axis) {
  SliceSample out;
  out.image = flip(sample.image, axis);
  for (std::size_t k = 0; k < kNumClasses; ++k) out.masks[k] = flip(sample.masks[k], axis);
  return out;
}

std::vector<std::size_t> window_offsets(std::size_t length, std::size_t size) {
  if (size == 0 || length < size) {
    throw DimensionError("patching: axis length " + std::to_string(length) +
                         " is smaller than the patch size " + std::to_string(size) +
                         "; run trim_and_pad or pad_to_minimum first");
  }
  std::vector<std::size_t> offsets;
  for (std::size_t o = 0; o + size < length; o += size) offsets.push_back(o);
  offsets.push_back(length - size);
  return offsets;
}

PatchLayout make_patch_layout(std::size_t height, std::size_t width, std::size_t size) {
  PatchLayout layout;
  layout.source_height = height;
  layout.source_width = width;
  layout.patch_size = size;
  for (std::size_t r : window_offsets(height, size)) {
    for (std::size_t c : window_offsets(width, size)) layout.placements.push_back({r, c});
  }
  return layout;
}

FloatGrid stitch_patches(std::span<const FloatGrid> patches, const PatchLayout& layout) {
  if (patches.size() != layout.placements.size()) {
    throw DimensionError("stitch_patches: " + std::to_string(patches.size()) +
                         " patches for a layout of " +
                         std::to_string(layout.placements.size()));
  }
  const std::size_t size = layout.patch_size;
  FloatGrid acc(layout.source_height, layout.source_width, 0.0f);
  std::vector<std::uint16_t> hits(acc.size(), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& patch = patches[i];
    const auto& p = layout.placements[i];
    if (patch.height != size || patch.width != size) {
      throw DimensionError("stitch_patches: patch " + std::to_string(i) + " is " +
                           dims_str(patch.height, patch.width) + ", layout expects " +
                           dims_str(size, size));
    }
    if (p.row + size > acc.height || p.col + size > acc.width) {
      throw DimensionError("stitch_patches: placement " + std::to_string(i) +
                           " falls outside the source extent");
    }
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        const std::size_t idx = (p.row + r) * acc.width + p.col + c;
        acc.values[idx] += patch.at(r, c);
        ++hits[idx];
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (hits[i] == 0) {
      throw DimensionError("stitch_patches: layout leaves source pixel " + std::to_string(i) +
                           " uncovered");
    }
    acc.values[i] /= static_cast<float>(hits[i]);
  }
  return acc;
}

}  // namespace tractseg
