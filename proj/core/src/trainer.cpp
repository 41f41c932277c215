// SPDX-License-Identifier: Apache-2.0
#include "tractseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "tractseg/ops.hpp"

namespace fs = std::filesystem;

namespace tractseg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor image_tensor(const FloatGrid& img) {
  return Tensor::from_data({1, 1, img.height, img.width}, img.values);
}

std::array<FloatGrid, kNumClasses> probabilities_at(Model& model, const FloatGrid& img) {
  NoGradGuard no_grad;
  const Tensor probs = sigmoid(model.forward(image_tensor(img), false));
  const auto data = probs.data();
  const std::size_t plane = img.height * img.width;
  std::array<FloatGrid, kNumClasses> out;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    out[k] = FloatGrid(img.height, img.width,
                       std::vector<float>(data.begin() + k * plane, data.begin() + (k + 1) * plane));
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1), got " + fmt_double(split_fraction));
  }
  if (!(lr_min >= 0.0) || !(lr_init >= lr_min)) {
    throw ConfigError("learning rates must satisfy lr_init >= lr_min >= 0, got lr_init " +
                      fmt_double(lr_init) + ", lr_min " + fmt_double(lr_min));
  }
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (image_size < 1) throw ConfigError("image size must be positive");
  loss.validate();
}

double cosine_lr(std::size_t t, const TrainConfig& config) { return config.schedule().at(t); }

std::string EpochHistory::to_csv() const {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + fmt_double(e.lr) + "," + fmt_double(e.train_loss);
    for (double v : e.validation.per_class_iou) out += "," + fmt_double(v);
    out += "," + fmt_double(e.validation.mean_iou) + "\n";
  }
  return out;
}

void EpochHistory::write_csv(const fs::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write history to " + path.string(), {path.string()});
  os << to_csv();
  if (!os) throw DataError("failed writing history to " + path.string(), {path.string()});
}

EpochHistory EpochHistory::read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open history file " + path.string(), {path.string()});
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) {
    throw DataError("history file " + path.string() + " lacks the header '" + kCsvHeader + "'",
                    {path.string()});
  }
  EpochHistory h;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 7) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields",
                      {path.string()});
    }
    EpochRecord e;
    try {
      e.epoch = std::stoul(fields[0]);
      e.lr = std::stod(fields[1]);
      e.train_loss = std::stod(fields[2]);
      for (std::size_t k = 0; k < kNumClasses; ++k) e.validation.per_class_iou[k] = std::stod(fields[3 + k]);
      e.validation.mean_iou = std::stod(fields[6]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field",
                      {path.string()});
    }
    e.validation.epoch = static_cast<int>(e.epoch);
    h.epochs.push_back(e);
  }
  return h;
}

DatasetSplit split_dataset(std::span<const SliceRecord> records, double fraction,
                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1), got " + fmt_double(fraction));
  }
  std::vector<std::string> cases;
  for (const auto& r : records) {
    if (std::find(cases.begin(), cases.end(), r.case_id) == cases.end()) cases.push_back(r.case_id);
  }
  std::sort(cases.begin(), cases.end());
  if (cases.size() < 2) {
    throw DataError("splitting by case needs at least 2 cases, found " +
                    std::to_string(cases.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(cases.begin(), cases.end(), rng);
  const auto n = static_cast<double>(cases.size());
  const std::size_t n_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * n)), 1, cases.size() - 1);
  std::map<std::string, bool> in_train;
  for (std::size_t i = 0; i < cases.size(); ++i) in_train[cases[i]] = i < n_train;
  DatasetSplit split;
  for (const auto& r : records) (in_train.at(r.case_id) ? split.train : split.validation).push_back(r);
  return split;
}

SliceSample prepare_sample(const SliceRecord& record, std::size_t image_size,
                           std::size_t* dropped_mask_pixels) {
  const TrimPadResult tp = trim_and_pad(load_image(record), image_size);
  SliceSample s;
  s.image = normalize(tp.image);
  std::size_t dropped = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    MaskTransformResult m = apply_record_to_mask(decode_mask(record, k), tp.record);
    dropped += m.dropped_pixels;
    s.masks[k] = std::move(m.mask);
  }
  if (dropped_mask_pixels) *dropped_mask_pixels = dropped;
  return s;
}

std::array<FloatGrid, kNumClasses> predict_probabilities(Model& model, const ImageU16& image,
                                                         std::size_t image_size, bool patch_mode) {
  std::array<FloatGrid, kNumClasses> out;
  if (patch_mode && (image.height > image_size || image.width > image_size)) {
    const TrimPadResult tp = pad_to_minimum(image, image_size);
    auto [patches, layout] = make_patches(normalize(tp.image), image_size);
    std::array<std::vector<FloatGrid>, kNumClasses> per_class;
    for (const auto& patch : patches) {
      auto probs = probabilities_at(model, patch);
      for (std::size_t k = 0; k < kNumClasses; ++k) per_class[k].push_back(std::move(probs[k]));
    }
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      out[k] = invert_record(stitch_patches(per_class[k], layout), tp.record);
    }
    return out;
  }
  const TrimPadResult tp = trim_and_pad(image, image_size);
  auto probs = probabilities_at(model, normalize(tp.image));
  for (std::size_t k = 0; k < kNumClasses; ++k) out[k] = invert_record(probs[k], tp.record);
  return out;
}

std::array<BinaryMask, kNumClasses> predict_masks(Model& model, const ImageU16& image,
                                                  std::size_t image_size, bool patch_mode) {
  const auto probs = predict_probabilities(model, image, image_size, patch_mode);
  std::array<BinaryMask, kNumClasses> out;
  for (std::size_t k = 0; k < kNumClasses; ++k) out[k] = threshold(probs[k]);
  return out;
}

MetricReport evaluate(Model& model, std::span<const SliceRecord> records, std::size_t image_size,
                      bool patch_mode, Split split) {
  MetricAccumulator acc;
  for (const auto& r : records) {
    const auto pred = predict_masks(model, load_image(r), image_size, patch_mode);
    std::array<double, kNumClasses> ious{};
    for (std::size_t k = 0; k < kNumClasses; ++k) ious[k] = iou_hard(pred[k], decode_mask(r, k));
    acc.add(ious);
  }
  return acc.report(0, split);
}

TrainResult train(Model& model, const DatasetIndex& dataset, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (config.image_size % model.config().required_divisor() != 0) {
    throw ConfigError("image size " + std::to_string(config.image_size) +
                      " is not a multiple of " + std::to_string(model.config().required_divisor()) +
                      " required by depth " + std::to_string(model.config().depth));
  }
  TrainResult result;
  result.split = split_dataset(dataset.records, config.split_fraction, config.seed);
  const auto& train_set = result.split.train;
  const auto& val_set = result.split.validation;
  if (train_set.empty() || val_set.empty()) throw DataError("empty train or validation split");
  if (options.checkpoint_dir) fs::create_directories(*options.checkpoint_dir);

  const std::size_t S = config.image_size;
  const std::size_t plane = S * S;
  AdamState adam = AdamState::for_parameters(model.parameters());
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, config);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, order.size() - start);
      std::vector<float> x(B * plane), y(B * kNumClasses * plane);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t idx = order[start + b];
        SliceSample s = prepare_sample(train_set[idx], S);
        if (config.augment_flips) {
          std::mt19937_64 aug(mix(mix(config.seed, epoch), idx));
          if (aug() & 1) s = flip(s, FlipAxis::Horizontal);
          if (aug() & 1) s = flip(s, FlipAxis::Vertical);
        }
        std::copy(s.image.values.begin(), s.image.values.end(), x.begin() + b * plane);
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          std::copy(s.masks[k].values.begin(), s.masks[k].values.end(),
                    y.begin() + (b * kNumClasses + k) * plane);
        }
      }
      const Tensor input = Tensor::from_data({B, 1, S, S}, std::move(x));
      const Tensor truth = Tensor::from_data({B, kNumClasses, S, S}, std::move(y));
      model.zero_grad();
      const Tensor loss = combined_loss(config.loss, sigmoid(model.forward(input, true)), truth);
      const float value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss " + fmt_double(value) + " at epoch " +
                              std::to_string(epoch) + ", batch starting at " + std::to_string(start));
      }
      backward(loss);
      adam_step(model.parameters(), adam, static_cast<float>(lr));
      loss_sum += static_cast<double>(value) * static_cast<double>(B);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.validation = evaluate(model, val_set, S, options.patch_mode_eval, Split::Validation);
    rec.validation.epoch = static_cast<int>(epoch);
    result.history.epochs.push_back(rec);
    if (rec.validation.mean_iou > result.best_mean_iou) {
      result.best_mean_iou = rec.validation.mean_iou;
      result.best_epoch = epoch;
      result.best_model = model.clone();
      if (options.checkpoint_dir) save_weights(model, *options.checkpoint_dir / "best.weights");
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (options.checkpoint_dir) {
    save_weights(model, *options.checkpoint_dir / "final.weights");
    result.history.write_csv(*options.checkpoint_dir / "history.csv");
  }
  return result;
}

const ExperimentCell& ExperimentTable::at(BlockStyle style, LossTag loss) const {
  for (const auto& c : cells) {
    if (c.style == style && c.loss == loss) return c;
  }
  throw Error("experiment table has no cell for " + std::string(to_string(style)) + " / " +
              std::string(to_string(loss)));
}

std::string ExperimentTable::to_markdown() const {
  char buf[32];
  std::string out = "| Encoder |";
  for (auto l : losses) out += " " + std::string(to_string(l)) + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < losses.size(); ++i) out += "---|";
  out += "\n";
  for (auto s : styles) {
    out += "| " + std::string(to_string(s)) + " |";
    for (auto l : losses) {
      std::snprintf(buf, sizeof buf, " %.1f%% |", 100.0 * at(s, l).final_validation_iou);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string ExperimentTable::to_csv() const {
  std::string out = "style,loss,final_validation_iou,best_validation_iou,final_train_iou\n";
  for (const auto& c : cells) {
    out += std::string(to_string(c.style)) + "," + std::string(to_string(c.loss)) + "," +
           fmt_double(c.final_validation_iou) + "," + fmt_double(c.best_validation_iou) + "," +
           fmt_double(c.final_train_iou) + "\n";
  }
  return out;
}

ExperimentTable run_experiment_grid(std::span<const BlockStyle> styles,
                                    std::span<const LossTag> losses, const UNetConfig& model_base,
                                    const TrainConfig& train_base, const DatasetIndex& dataset) {
  ExperimentTable table;
  table.styles.assign(styles.begin(), styles.end());
  table.losses.assign(losses.begin(), losses.end());
  for (auto style : styles) {
    for (auto tag : losses) {
      UNetConfig mc = model_base;
      mc.block_style = style;
      TrainConfig tc = train_base;
      tc.loss.tag = tag;
      Model model = Model::build(mc);
      TrainResult r = train(model, dataset, tc);
      ExperimentCell cell;
      cell.style = style;
      cell.loss = tag;
      cell.final_validation_iou = r.history.epochs.back().validation.mean_iou;
      cell.best_validation_iou = r.best_mean_iou;
      cell.final_train_iou = evaluate(model, r.split.train, tc.image_size, false, Split::Train).mean_iou;
      table.cells.push_back(cell);
    }
  }
  return table;
}

}  // namespace tractseg
