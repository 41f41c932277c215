// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "tractseg/grid.hpp"

namespace tractseg {

inline constexpr std::size_t kModelInputSize = 288;
inline constexpr std::size_t kNumClasses = 3;
/// Class order used for model output channels and CSV rows.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "large_bowel", "small_bowel", "stomach"};

/// How one axis of a slice was cut and padded.
///
/// The retained source range is [trim_before, source - trim_after); it lands at
/// offset pad_before of an axis of length `result`. `crop_before/after` are the
/// parts of the trim that had to cut into non-zero content.
struct AxisTransform {
  std::size_t source = 0;
  std::size_t result = 0;
  std::size_t trim_before = 0;
  std::size_t trim_after = 0;
  std::size_t crop_before = 0;
  std::size_t crop_after = 0;
  std::size_t pad_before = 0;
  std::size_t pad_after = 0;

  std::size_t retained() const noexcept { return source - trim_before - trim_after; }
  friend bool operator==(const AxisTransform&, const AxisTransform&) = default;
};

struct TrimPadRecord {
  AxisTransform rows;
  AxisTransform cols;

  bool is_identity() const noexcept {
    return rows.source == rows.result && cols.source == cols.result && rows.trim_before == 0 &&
           cols.trim_before == 0 && rows.pad_before == 0 && cols.pad_before == 0;
  }
  bool center_cropped() const noexcept {
    return rows.crop_before + rows.crop_after + cols.crop_before + cols.crop_after > 0;
  }
  friend bool operator==(const TrimPadRecord&, const TrimPadRecord&) = default;
};

struct TrimPadResult {
  ImageU16 image;
  TrimPadRecord record;
};

/// Brings each axis to exactly `target` pixels independently.
///
/// Shorter axes are zero-padded symmetrically, the odd pixel going to the
/// bottom/right. Longer axes first lose all-zero border lines, alternating
/// between the leading and trailing edge and stopping as soon as the axis fits;
/// any remaining excess is center-cropped.
TrimPadResult trim_and_pad(const ImageU16& image, std::size_t target = kModelInputSize);

/// Pads axes shorter than `target` as trim_and_pad does and leaves longer axes
/// untouched, for patch-wise inference on oversized slices.
TrimPadResult pad_to_minimum(const ImageU16& image, std::size_t target = kModelInputSize);

/// Applies a recorded transform to any grid with the record's source dims.
template <typename T>
Grid<T> apply_record(const Grid<T>& src, const TrimPadRecord& rec);

/// Maps a transformed grid back to the source dims; trimmed pixels become 0.
template <typename T>
Grid<T> invert_record(const Grid<T>& transformed, const TrimPadRecord& rec);

struct MaskTransformResult {
  BinaryMask mask;
  /// Set pixels that fell inside trimmed or cropped lines.
  std::size_t dropped_pixels = 0;
};

MaskTransformResult apply_record_to_mask(const BinaryMask& mask, const TrimPadRecord& rec);

/// Per-image min-max scaling to [0, 1]; a constant image maps to zeros.
FloatGrid normalize(const ImageU16& image);

enum class FlipAxis {
  Horizontal,  // mirror columns (left <-> right)
  Vertical,    // mirror rows (top <-> bottom)
};

template <typename T>
Grid<T> flip(const Grid<T>& g, FlipAxis axis);

/// A preprocessed training example: normalized image plus one mask per class
/// (large bowel, small bowel, stomach).
struct SliceSample {
  FloatGrid image;
  std::array<BinaryMask, kNumClasses> masks;

  friend bool operator==(const SliceSample&, const SliceSample&) = default;
};

SliceSample flip(const SliceSample& sample, FlipAxis axis);

struct PatchPlacement {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PatchPlacement&, const PatchPlacement&) = default;
};

struct PatchLayout {
  std::size_t source_height = 0;
  std::size_t source_width = 0;
  std::size_t patch_size = kModelInputSize;
  std::vector<PatchPlacement> placements;  // emission order: row-major over windows
};

/// Window offsets along one axis: stride `size`, last window flush with the
/// far edge. Requires length >= size.
std::vector<std::size_t> window_offsets(std::size_t length, std::size_t size);

PatchLayout make_patch_layout(std::size_t height, std::size_t width,
                              std::size_t size = kModelInputSize);

template <typename T>
std::pair<std::vector<Grid<T>>, PatchLayout> make_patches(const Grid<T>& image,
                                                          std::size_t size = kModelInputSize);

/// Each output pixel is the mean of every patch value covering it.
FloatGrid stitch_patches(std::span<const FloatGrid> patches, const PatchLayout& layout);

// ---------------------------------------------------------------------------

template <typename T>
Grid<T> apply_record(const Grid<T>& src, const TrimPadRecord& rec) {
  if (src.height != rec.rows.source || src.width != rec.cols.source) {
    throw DimensionError("apply_record: grid " + dims_str(src.height, src.width) +
                         " does not match record source " +
                         dims_str(rec.rows.source, rec.cols.source));
  }
  Grid<T> out(rec.rows.result, rec.cols.result, T{});
  const std::size_t nr = rec.rows.retained(), nc = rec.cols.retained();
  for (std::size_t r = 0; r < nr; ++r) {
    const T* s = src.values.data() + (r + rec.rows.trim_before) * src.width + rec.cols.trim_before;
    T* d = out.values.data() + (r + rec.rows.pad_before) * out.width + rec.cols.pad_before;
    std::copy_n(s, nc, d);
  }
  return out;
}

template <typename T>
Grid<T> invert_record(const Grid<T>& transformed, const TrimPadRecord& rec) {
  if (transformed.height != rec.rows.result || transformed.width != rec.cols.result) {
    throw DimensionError("invert_record: grid " +
                         dims_str(transformed.height, transformed.width) +
                         " does not match record result " +
                         dims_str(rec.rows.result, rec.cols.result));
  }
  Grid<T> out(rec.rows.source, rec.cols.source, T{});
  const std::size_t nr = rec.rows.retained(), nc = rec.cols.retained();
  for (std::size_t r = 0; r < nr; ++r) {
    const T* s = transformed.values.data() + (r + rec.rows.pad_before) * transformed.width +
                 rec.cols.pad_before;
    T* d = out.values.data() + (r + rec.rows.trim_before) * out.width + rec.cols.trim_before;
    std::copy_n(s, nc, d);
  }
  return out;
}

template <typename T>
Grid<T> flip(const Grid<T>& g, FlipAxis axis) {
  Grid<T> out(g.height, g.width, T{});
  for (std::size_t r = 0; r < g.height; ++r) {
    for (std::size_t c = 0; c < g.width; ++c) {
      const std::size_t sr = axis == FlipAxis::Vertical ? g.height - 1 - r : r;
      const std::size_t sc = axis == FlipAxis::Horizontal ? g.width - 1 - c : c;
      out.at(r, c) = g.at(sr, sc);
    }
  }
  return out;
}

template <typename T>
std::pair<std::vector<Grid<T>>, PatchLayout> make_patches(const Grid<T>& image, std::size_t size) {
  PatchLayout layout = make_patch_layout(image.height, image.width, size);
  std::vector<Grid<T>> patches;
  patches.reserve(layout.placements.size());
  for (const auto& p : layout.placements) {
    Grid<T> patch(size, size, T{});
    for (std::size_t r = 0; r < size; ++r) {
      std::copy_n(image.values.data() + (p.row + r) * image.width + p.col, size,
                  patch.values.data() + r * size);
    }
    patches.push_back(std::move(patch));
  }
  return {std::move(patches), std::move(layout)};
}

}  // namespace tractseg
