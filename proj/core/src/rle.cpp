// SPDX-License-Identifier: Apache-2.0
#include "tractseg/rle.hpp"

#include <algorithm>
#include <charconv>

namespace tractseg {

namespace {

std::vector<std::string_view> split_tokens(std::string_view text) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t') ++j;
    if (j > i) tokens.push_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

std::size_t parse_number(std::string_view token, std::size_t pair) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw RleParseError("rle pair " + std::to_string(pair) + ": token '" + std::string(token) +
                            "' is not a non-negative integer",
                        pair);
  }
  return value;
}

std::vector<Run> tokenize(std::string_view text) {
  auto tokens = split_tokens(text);
  if (tokens.size() % 2 != 0) {
    throw RleParseError("rle has odd token count " + std::to_string(tokens.size()) +
                            "; last pair (" + std::to_string(tokens.size() / 2) +
                            ") is missing its length",
                        tokens.size() / 2);
  }
  std::vector<Run> runs;
  runs.reserve(tokens.size() / 2);
  for (std::size_t p = 0; p < tokens.size() / 2; ++p) {
    Run r{parse_number(tokens[2 * p], p), parse_number(tokens[2 * p + 1], p)};
    if (r.start == 0) {
      throw RleParseError("rle pair " + std::to_string(p) + " (0 " + std::to_string(r.length) +
                              "): start must be >= 1",
                          p);
    }
    if (r.length == 0) {
      throw RleParseError("rle pair " + std::to_string(p) + " (" + std::to_string(r.start) +
                              " 0): length must be >= 1",
                          p);
    }
    runs.push_back(r);
  }
  return runs;
}

std::string pair_text(std::size_t p, const Run& r) {
  return "rle pair " + std::to_string(p) + " (" + std::to_string(r.start) + " " +
         std::to_string(r.length) + ")";
}

BinaryMask paint(const std::vector<Run>& runs, std::size_t height, std::size_t width) {
  BinaryMask mask(height, width, 0);
  for (const Run& r : runs) {
    std::fill_n(mask.values.begin() + static_cast<std::ptrdiff_t>(r.start - 1), r.length, 1);
  }
  return mask;
}

}  // namespace

std::vector<Run> parse_runs(std::string_view text, std::size_t pixel_count) {
  auto runs = tokenize(text);
  std::size_t prev_end = 0;  // 1-based inclusive end of previous run, 0 = none
  for (std::size_t p = 0; p < runs.size(); ++p) {
    const Run& r = runs[p];
    const std::size_t end = r.start + r.length - 1;
    if (end > pixel_count || end < r.start) {
      throw RleParseError(pair_text(p, r) + " ends at " + std::to_string(end) + ", beyond " +
                              std::to_string(pixel_count) + " pixels",
                          p);
    }
    if (p > 0 && r.start <= runs[p - 1].start) {
      throw RleParseError(pair_text(p, r) + " starts before the previous run", p);
    }
    if (r.start <= prev_end) {
      throw RleParseError(pair_text(p, r) + " overlaps the previous run ending at " +
                              std::to_string(prev_end),
                          p);
    }
    prev_end = end;
  }
  return runs;
}

BinaryMask decode_rle(std::string_view text, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw DimensionError("decode_rle: mask dimensions must be positive, got " +
                         dims_str(height, width));
  }
  return paint(parse_runs(text, height * width), height, width);
}

BinaryMask decode_rle_lenient(std::string_view text, std::size_t height, std::size_t width,
                              const std::function<void(const std::string&)>& warn) {
  if (height == 0 || width == 0) {
    throw DimensionError("decode_rle: mask dimensions must be positive, got " +
                         dims_str(height, width));
  }
  const std::size_t n = height * width;
  auto runs = tokenize(text);
  std::vector<Run> kept;
  kept.reserve(runs.size());
  for (std::size_t p = 0; p < runs.size(); ++p) {
    Run r = runs[p];
    if (r.start > n) {
      if (warn) warn(pair_text(p, r) + " starts beyond " + std::to_string(n) + " pixels; dropped");
      continue;
    }
    if (r.length > n - r.start + 1) {
      if (warn) warn(pair_text(p, r) + " clipped to the mask end");
      r.length = n - r.start + 1;
    }
    kept.push_back(r);
  }
  return paint(kept, height, width);
}

std::string encode_rle(const BinaryMask& mask) {
  std::string out;
  const auto& v = mask.values;
  std::size_t i = 0;
  while (i < v.size()) {
    if (!v[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < v.size() && v[j]) ++j;
    if (!out.empty()) out.push_back(' ');
    out += std::to_string(i + 1);
    out.push_back(' ');
    out += std::to_string(j - i);
    i = j;
  }
  return out;
}

}  // namespace tractseg
