// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "tractseg/trainer.hpp"
#include "tractseg/unet.hpp"

namespace tractseg::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kDataError = 2,
  kDivergence = 3,
};

/// Everything `train` needs; keys of to_json match the flag names.
struct RunConfig {
  UNetConfig model;
  TrainConfig train;
  std::filesystem::path data;
  std::filesystem::path annotations;  // empty: <data>/train.csv when present
  std::filesystem::path run_root = "runs";
  bool patch_eval = false;
};

nlohmann::ordered_json to_json(const RunConfig& config);

/// Creates <run_root>/<UTC timestamp>_seed<N>, adding -2, -3, ... when taken.
std::filesystem::path make_run_dir(const std::filesystem::path& run_root, std::uint64_t seed);

/// Entry point shared by the executable and the tests. `argv[0]` is ignored.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tractseg::cli
