// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tractseg/grid.hpp"

namespace tractseg {

/// Mask run-length text: space-separated "start length" pairs. Starts are
/// 1-based positions in the row-major flattening of the mask (left to right,
/// top to bottom). Canonical strings have sorted, non-overlapping,
/// non-adjacent runs.
struct Run {
  std::size_t start;   // 1-based
  std::size_t length;  // >= 1

  friend bool operator==(const Run&, const Run&) = default;
};

/// Tokenizes and validates `text` against a mask of `pixel_count` pixels.
/// Throws RleParseError naming the offending pair on odd token count,
/// non-numeric tokens, zero start/length, out-of-range or overlapping runs.
/// Adjacent (touching) runs are accepted; they decode unambiguously.
std::vector<Run> parse_runs(std::string_view text, std::size_t pixel_count);

/// Strict decoder.
BinaryMask decode_rle(std::string_view text, std::size_t height, std::size_t width);

/// Lenient decoder: runs that extend past the mask are clipped, runs that
/// start past it are dropped; each such repair is reported through `warn`.
/// Overlapping or unordered runs are painted as a union. Token-level syntax
/// errors still throw.
BinaryMask decode_rle_lenient(std::string_view text, std::size_t height, std::size_t width,
                              const std::function<void(const std::string&)>& warn = {});

/// Canonical encoding; an empty mask encodes to "".
std::string encode_rle(const BinaryMask& mask);

}  // namespace tractseg
