// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tractseg {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or grid shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (model topology, training recipe).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed run-length string. `pair_index` is the zero-based (start, length)
/// pair at fault, or npos when the problem is not tied to one pair.
class RleParseError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  RleParseError(const std::string& what, std::size_t pair_index)
      : Error(what), pair_index_(pair_index) {}

  std::size_t pair_index() const noexcept { return pair_index_; }

 private:
  std::size_t pair_index_;
};

/// Problems with on-disk data: missing files, bad PNGs, bad CSV rows.
/// `paths` lists every offending path or row id.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, std::vector<std::string> paths = {})
      : Error(what), paths_(std::move(paths)) {}

  const std::vector<std::string>& paths() const noexcept { return paths_; }

 private:
  std::vector<std::string> paths_;
};

/// Non-finite loss during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace tractseg
