// SPDX-License-Identifier: Apache-2.0
#include "tractseg/unet.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "tractseg/error.hpp"
#include "tractseg/grid.hpp"

namespace tractseg {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'E', 'G', 'W', 'G', 'T', '\0'};

std::string lower_alnum(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(BlockStyle style) {
  switch (style) {
    case BlockStyle::Plain:
      return "plain";
    case BlockStyle::Residual:
      return "residual";
    case BlockStyle::InvertedResidual:
      return "inverted_residual";
  }
  return "?";
}

BlockStyle parse_block_style(std::string_view name) {
  const std::string key = lower_alnum(name);
  if (key == "plain" || key == "vgg") return BlockStyle::Plain;
  if (key == "residual" || key == "resnet") return BlockStyle::Residual;
  if (key == "invertedresidual" || key == "mobilenet" || key == "mbconv") {
    return BlockStyle::InvertedResidual;
  }
  throw ConfigError("unknown block style '" + std::string(name) +
                    "' (expected plain, residual or inverted_residual)");
}

void UNetConfig::validate() const {
  if (depth < 2 || depth > 12) {
    throw ConfigError("unet depth must be in [2, 12], got " + std::to_string(depth));
  }
  if (base_channels == 0) throw ConfigError("unet base_channels must be positive");
  if (in_channels == 0) throw ConfigError("unet in_channels must be positive");
  if (out_channels != 3) {
    throw ConfigError("unet out_channels must be 3 (one per organ class), got " +
                      std::to_string(out_channels));
  }
  if (block_style == BlockStyle::InvertedResidual && expansion == 0) {
    throw ConfigError("inverted residual expansion must be positive");
  }
}

std::string serialize_config(const UNetConfig& c) {
  nlohmann::ordered_json j;
  j["depth"] = c.depth;
  j["base_channels"] = c.base_channels;
  j["in_channels"] = c.in_channels;
  j["out_channels"] = c.out_channels;
  j["block_style"] = std::string(to_string(c.block_style));
  j["expansion"] = c.expansion;
  j["seed"] = c.seed;
  return j.dump();
}

UNetConfig parse_unet_config(std::string_view text) {
  UNetConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    c.depth = j.at("depth").get<std::size_t>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    c.block_style = parse_block_style(j.at("block_style").get<std::string>());
    c.expansion = j.at("expansion").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed unet config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor Model::add_param(const std::string& name, Shape shape) {
  Tensor t = Tensor::zeros(shape, true);
  param_index_.emplace(name, params_.size());
  params_.push_back({name, t});
  return t;
}

void Model::add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
  add_param(name + ".weight", Shape{out, in, k, k});
}

void Model::add_batchnorm(const std::string& prefix, std::size_t channels) {
  Tensor gamma = add_param(prefix + ".weight", Shape{channels});
  std::fill(gamma.mutable_data().begin(), gamma.mutable_data().end(), 1.0f);
  add_param(prefix + ".bias", Shape{channels});
  RunningStats stats = RunningStats::init(channels);
  buffers_.push_back({prefix + ".running_mean", stats.mean});
  buffers_.push_back({prefix + ".running_var", stats.var});
  stats_.emplace(prefix, stats);
}

void Model::add_block(const std::string& p, std::size_t in, std::size_t out) {
  switch (config_.block_style) {
    case BlockStyle::Plain:
      add_conv(p + ".conv1", out, in, 3);
      add_batchnorm(p + ".bn1", out);
      add_conv(p + ".conv2", out, out, 3);
      add_batchnorm(p + ".bn2", out);
      break;
    case BlockStyle::Residual:
      add_conv(p + ".conv1", out, in, 3);
      add_batchnorm(p + ".bn1", out);
      add_conv(p + ".conv2", out, out, 3);
      add_batchnorm(p + ".bn2", out);
      if (in != out) {
        add_conv(p + ".shortcut", out, in, 1);
        add_batchnorm(p + ".shortcut_bn", out);
      }
      break;
    case BlockStyle::InvertedResidual: {
      const std::size_t hidden = config_.expansion * out;
      add_conv(p + ".expand", hidden, in, 1);
      add_batchnorm(p + ".bn1", hidden);
      add_param(p + ".depthwise.weight", Shape{hidden, 1, 3, 3});
      add_batchnorm(p + ".bn2", hidden);
      add_conv(p + ".project", out, hidden, 1);
      add_batchnorm(p + ".bn3", out);
      break;
    }
  }
}

Model Model::build(const UNetConfig& config) {
  config.validate();
  Model m(config);
  const std::size_t d = config.depth;
  auto width = [&](std::size_t level) { return config.base_channels << level; };

  for (std::size_t l = 0; l < d; ++l) {
    m.add_block("enc" + std::to_string(l), l == 0 ? config.in_channels : width(l - 1), width(l));
  }
  for (std::size_t l = d - 1; l-- > 0;) {
    m.add_param("up" + std::to_string(l) + ".weight", Shape{width(l + 1), width(l), 2, 2});
    m.add_block("dec" + std::to_string(l), 2 * width(l), width(l));
  }
  m.add_conv("head", config.out_channels, width(0), 1);
  m.add_param("head.bias", Shape{config.out_channels});

  // He-normal on every convolution kernel; norms stay at (1, 0), biases at 0.
  std::mt19937_64 rng(config.seed);
  for (auto& [name, t] : m.params_) {
    const auto& s = t.shape();
    if (s.rank() != 4) continue;
    double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
    if (name.rfind("up", 0) == 0) {
      // Transposed 2x2/stride-2 kernel: every output pixel sees exactly Cin inputs.
      fan_in = static_cast<double>(s[0]);
    }
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    for (float& v : t.mutable_data()) v = dist(rng);
  }
  return m;
}

Model Model::clone() const {
  Model m(config_);
  m.param_index_ = param_index_;
  for (const auto& [name, t] : params_) {
    Tensor c = t.clone();
    c.set_requires_grad(true);
    m.params_.push_back({name, c});
  }
  for (const auto& [name, t] : buffers_) m.buffers_.push_back({name, t.clone()});
  for (std::size_t i = 0; i + 1 < m.buffers_.size(); i += 2) {
    const std::string& mean_name = m.buffers_[i].name;
    const std::string prefix = mean_name.substr(0, mean_name.size() - std::strlen(".running_mean"));
    m.stats_.emplace(prefix, RunningStats{m.buffers_[i].tensor, m.buffers_[i + 1].tensor});
  }
  return m;
}

Tensor& Model::param(const std::string& name) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw Error("model has no parameter '" + name + "'");
  return params_[it->second].tensor;
}

Tensor Model::conv(const std::string& name, const Tensor& x, std::size_t padding,
                   std::size_t groups) {
  return conv2d(x, param(name + ".weight"), Tensor{}, {1, padding, groups});
}

Tensor Model::bn(const std::string& prefix, const Tensor& x, bool training) {
  return batchnorm2d(x, param(prefix + ".weight"), param(prefix + ".bias"), stats_.at(prefix),
                     training);
}

Tensor Model::block(const std::string& p, const Tensor& x, std::size_t in, std::size_t out,
                    bool training) {
  switch (config_.block_style) {
    case BlockStyle::Plain: {
      Tensor h = relu(bn(p + ".bn1", conv(p + ".conv1", x, 1), training));
      return relu(bn(p + ".bn2", conv(p + ".conv2", h, 1), training));
    }
    case BlockStyle::Residual: {
      Tensor h = relu(bn(p + ".bn1", conv(p + ".conv1", x, 1), training));
      h = bn(p + ".bn2", conv(p + ".conv2", h, 1), training);
      Tensor shortcut = in == out ? x : bn(p + ".shortcut_bn", conv(p + ".shortcut", x, 0), training);
      return relu(add(h, shortcut));
    }
    case BlockStyle::InvertedResidual: {
      const std::size_t hidden = config_.expansion * out;
      Tensor h = relu(bn(p + ".bn1", conv(p + ".expand", x, 0), training));
      h = relu(bn(p + ".bn2", conv(p + ".depthwise", h, 1, hidden), training));
      h = bn(p + ".bn3", conv(p + ".project", h, 0), training);
      return in == out ? add(h, x) : h;
    }
  }
  throw ConfigError("unhandled block style");
}

Tensor Model::forward(const Tensor& batch, bool training) {
  const auto& s = batch.shape();
  if (s.rank() != 4 || s[1] != config_.in_channels) {
    throw DimensionError("unet forward expects [B, " + std::to_string(config_.in_channels) +
                         ", H, W], got " + s.str());
  }
  const std::size_t div = config_.required_divisor();
  if (s[2] % div != 0 || s[3] % div != 0) {
    throw DimensionError("unet forward: spatial size " + dims_str(s[2], s[3]) +
                         " must be divisible by " + std::to_string(div) + " for depth " +
                         std::to_string(config_.depth));
  }
  const std::size_t d = config_.depth;
  auto width = [&](std::size_t level) { return config_.base_channels << level; };

  std::vector<Tensor> skips;
  Tensor x = batch;
  for (std::size_t l = 0; l < d; ++l) {
    x = block("enc" + std::to_string(l), x, l == 0 ? config_.in_channels : width(l - 1), width(l),
              training);
    if (l + 1 < d) {
      skips.push_back(x);
      x = maxpool2d(x);
    }
  }
  for (std::size_t l = d - 1; l-- > 0;) {
    Tensor up = conv_transpose2d(x, param("up" + std::to_string(l) + ".weight"), 2);
    x = block("dec" + std::to_string(l), concat_channels(up, skips[l]), 2 * width(l), width(l),
              training);
  }
  return conv2d(x, param("head.weight"), param("head.bias"), {1, 0, 1});
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t count_parameters(const Model& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Weight files

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_floats(std::ostream& os, std::span<const float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  void bytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw DataError("weight file truncated: " + path_, {path_});
    }
  }
  std::uint64_t uint(int width) {
    unsigned char b[8] = {};
    bytes(b, static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    if (n > (1u << 24)) throw DataError("weight file corrupt (string length): " + path_, {path_});
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void floats(std::span<float> out) {
    std::vector<unsigned char> buf(out.size() * 4);
    bytes(buf.data(), buf.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[4 * i + k]) << (8 * k);
      out[i] = std::bit_cast<float>(bits);
    }
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace

void save_weights(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open weight file for writing: " + path.string(), {path.string()});
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kWeightFormatVersion);
  const std::string cfg = serialize_config(model.config());
  put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put_u32(os, static_cast<std::uint32_t>(model.parameters().size() + model.buffers().size()));
  auto write_entry = [&](const NamedTensor& nt, std::uint8_t kind) {
    put_u32(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    os.put(static_cast<char>(kind));
    const auto& dims = nt.tensor.shape().dims();
    put_u32(os, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put_u64(os, d);
    put_floats(os, nt.tensor.data());
  };
  for (const auto& p : model.parameters()) write_entry(p, 0);
  for (const auto& b : model.buffers()) write_entry(b, 1);
  if (!os) throw DataError("failed writing weight file: " + path.string(), {path.string()});
}

Model load_weights(const std::filesystem::path& path) {
  const std::string ps = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open weight file: " + ps, {ps});
  Reader rd(is, ps);
  char magic[8];
  rd.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a tractseg weight file (bad magic): " + ps, {ps});
  }
  const auto version = static_cast<std::uint32_t>(rd.uint(4));
  if (version != kWeightFormatVersion) {
    throw DataError("unsupported weight format version " + std::to_string(version) +
                        " (expected " + std::to_string(kWeightFormatVersion) + "): " + ps,
                    {ps});
  }
  const UNetConfig config = parse_unet_config(rd.str(rd.uint(4)));
  Model model = Model::build(config);

  const auto count = rd.uint(4);
  if (count != model.parameters().size() + model.buffers().size()) {
    throw DataError("weight file holds " + std::to_string(count) + " tensors, config implies " +
                        std::to_string(model.parameters().size() + model.buffers().size()) +
                        ": " + ps,
                    {ps});
  }
  std::map<std::string, Tensor, std::less<>> targets;
  for (auto& p : model.parameters()) targets.emplace(p.name, p.tensor);
  for (auto& b : model.buffers()) targets.emplace(b.name, b.tensor);
  std::set<std::string> seen;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string name = rd.str(rd.uint(4));
    char kind;
    rd.bytes(&kind, 1);
    const auto rank = rd.uint(4);
    if (rank == 0 || rank > 8) throw DataError("weight file corrupt (rank) in " + ps, {ps});
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = rd.uint(8);
    auto it = targets.find(name);
    if (!seen.insert(name).second) {
      throw DataError("weight file repeats entry '" + name + "': " + ps, {ps});
    }
    if (it == targets.end()) {
      throw DataError("weight file entry '" + name + "' is not part of the model: " + ps, {ps});
    }
    if (it->second.shape().dims() != dims) {
      throw DataError("weight file entry '" + name + "' has shape " + Shape(dims).str() +
                          ", model expects " + it->second.shape().str(),
                      {ps});
    }
    rd.floats(it->second.mutable_data());
  }
  return model;
}

Model load_weights(const std::filesystem::path& path, const UNetConfig& expected) {
  Model m = load_weights(path);
  if (!(m.config() == expected)) {
    throw ConfigError("weight file config " + serialize_config(m.config()) +
                      " does not match expected " + serialize_config(expected));
  }
  return m;
}

}  // namespace tractseg
