// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tractseg/ops.hpp"
#include "tractseg/tensor.hpp"

namespace tractseg {

/// Encoder/decoder block flavours standing in for the backbone families.
enum class BlockStyle {
  Plain,             // two conv3x3-BN-ReLU layers (VGG-like)
  Residual,          // basic residual block, 1x1 projection when widths differ
  InvertedResidual,  // expand 1x1 -> depthwise 3x3 -> linear project 1x1
};

std::string_view to_string(BlockStyle style);
BlockStyle parse_block_style(std::string_view name);

struct UNetConfig {
  std::size_t depth = 5;  // resolution levels, including the bottleneck
  std::size_t base_channels = 64;
  std::size_t in_channels = 1;
  std::size_t out_channels = 3;
  BlockStyle block_style = BlockStyle::Plain;
  std::size_t expansion = 4;  // inverted-residual hidden width = expansion * block output width
  std::uint64_t seed = 0;

  /// Spatial sizes must be multiples of this: 2^(depth - 1).
  std::size_t required_divisor() const noexcept { return std::size_t{1} << (depth - 1); }
  void validate() const;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

std::string serialize_config(const UNetConfig& config);
UNetConfig parse_unet_config(std::string_view json_text);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// U-Net over the autodiff ops. Parameters are leaves with requires_grad set;
/// batch-norm running statistics are separate, untrained buffers.
class Model {
 public:
  static Model build(const UNetConfig& config);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Deep copy of parameters and buffers.
  Model clone() const;

  /// batch [B, in_channels, H, W] -> logits [B, out_channels, H, W].
  /// Training mode normalizes with batch statistics and updates the buffers.
  Tensor forward(const Tensor& batch, bool training);

  const UNetConfig& config() const noexcept { return config_; }
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& buffers() noexcept { return buffers_; }
  const std::vector<NamedTensor>& buffers() const noexcept { return buffers_; }

  void zero_grad();

 private:
  explicit Model(UNetConfig config) : config_(std::move(config)) {}

  Tensor& param(const std::string& name);
  Tensor add_param(const std::string& name, Shape shape);
  void add_batchnorm(const std::string& prefix, std::size_t channels);
  void add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k);
  void add_block(const std::string& prefix, std::size_t in, std::size_t out);

  Tensor conv(const std::string& name, const Tensor& x, std::size_t padding,
              std::size_t groups = 1);
  Tensor bn(const std::string& prefix, const Tensor& x, bool training);
  Tensor block(const std::string& prefix, const Tensor& x, std::size_t in, std::size_t out,
               bool training);

  UNetConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::map<std::string, std::size_t, std::less<>> param_index_;
  std::map<std::string, RunningStats, std::less<>> stats_;
};

std::size_t count_parameters(const Model& model);

inline constexpr std::uint32_t kWeightFormatVersion = 1;

/// Binary checkpoint: magic "TSEGWGT\0", u32 version, u32 config length,
/// config JSON, u32 entry count, then per entry: u32 name length, name,
/// u8 kind (0 parameter, 1 buffer), u32 rank, u64 dims[rank], raw
/// little-endian float32 data.
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);
/// As above, but throws ConfigError unless the stored config equals `expected`.
Model load_weights(const std::filesystem::path& path, const UNetConfig& expected);

}  // namespace tractseg
