// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tractseg/error.hpp"

namespace tractseg {

/// Row-major 2-D array.
template <typename T>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), values(h * w, fill) {}
  Grid(std::size_t h, std::size_t w, std::vector<T> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w) {
      throw DimensionError("grid data length " + std::to_string(values.size()) +
                           " does not match " + std::to_string(h) + "x" + std::to_string(w));
    }
  }

  T& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const noexcept { return values.size(); }
  bool same_dims(const auto& other) const noexcept {
    return height == other.height && width == other.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// One 16-bit grayscale slice as stored on disk.
using ImageU16 = Grid<std::uint16_t>;
using FloatGrid = Grid<float>;

/// Boolean H x W mask for one organ class, stored one byte per pixel (0 or 1).
using BinaryMask = Grid<std::uint8_t>;

inline std::size_t popcount(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.values) n += v != 0;
  return n;
}

inline std::string dims_str(std::size_t h, std::size_t w) {
  return std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace tractseg
