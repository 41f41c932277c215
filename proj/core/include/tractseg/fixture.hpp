// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

namespace tractseg {

/// Synthetic dataset of geometric pseudo-organs in the on-disk layout:
/// a body ellipse with a solid stomach blob, a large-bowel ring and a few
/// small-bowel disks, each at its own intensity.
struct FixtureOptions {
  std::size_t cases = 4;
  std::size_t days_per_case = 1;
  std::size_t slices_per_day = 2;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
};

struct FixtureSummary {
  std::filesystem::path root;
  std::filesystem::path annotations;  // <root>/train.csv
  std::size_t slices = 0;
};

/// Writes the fixture under `root` (created if needed). Existing slice files
/// with the same names are overwritten.
FixtureSummary generate_fixture(const std::filesystem::path& root, const FixtureOptions& options = {});

}  // namespace tractseg
