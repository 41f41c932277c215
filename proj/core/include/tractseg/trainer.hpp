// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tractseg/dataset.hpp"
#include "tractseg/losses.hpp"
#include "tractseg/optim.hpp"
#include "tractseg/preprocess.hpp"
#include "tractseg/unet.hpp"

namespace tractseg {

/// Training recipe. Defaults: Adam at 5e-3 with full-run cosine decay to 0,
/// batch 32, 80 epochs, 80/20 case-level split, random flips.
struct TrainConfig {
  double lr_init = 5e-3;
  double lr_min = 0.0;
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  double split_fraction = 0.8;
  LossKind loss;
  bool augment_flips = true;
  std::uint64_t seed = 0;
  /// Side of the square model input. Slices are trimmed/padded to it.
  std::size_t image_size = kModelInputSize;

  void validate() const;
  CosineSchedule schedule() const { return {lr_init, lr_min, epochs}; }
};

/// Learning rate for epoch index t in [0, epochs]; epoch e (1-based) trains
/// with cosine_lr(e - 1).
double cosine_lr(std::size_t t, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  MetricReport validation;
};

struct EpochHistory {
  std::vector<EpochRecord> epochs;

  static constexpr const char* kCsvHeader =
      "epoch,lr,train_loss,iou_large_bowel,iou_small_bowel,iou_stomach,mean_iou";

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static EpochHistory read_csv(const std::filesystem::path& path);
};

struct DatasetSplit {
  std::vector<SliceRecord> train;
  std::vector<SliceRecord> validation;
};

/// Case-level split: cases are shuffled with `seed`, the first
/// round(fraction * cases) (at least one, at most cases - 1) go to train.
/// Throws DataError with fewer than two cases.
DatasetSplit split_dataset(std::span<const SliceRecord> records, double fraction,
                           std::uint64_t seed);

/// Loads, trims/pads to `image_size`, normalizes and decodes masks.
/// `dropped_mask_pixels`, when given, receives the count of set mask pixels
/// lost to trimming.
SliceSample prepare_sample(const SliceRecord& record, std::size_t image_size,
                           std::size_t* dropped_mask_pixels = nullptr);

/// Per-class probabilities at the slice's original dimensions.
///
/// Whole-image mode trims/pads to the model size, predicts once and maps the
/// result back (trimmed pixels get probability 0). Patch mode pads undersized
/// axes only, predicts every sliding window and averages overlaps.
std::array<FloatGrid, kNumClasses> predict_probabilities(Model& model, const ImageU16& image,
                                                         std::size_t image_size, bool patch_mode);

/// Thresholded per-class masks at original dimensions.
std::array<BinaryMask, kNumClasses> predict_masks(Model& model, const ImageU16& image,
                                                  std::size_t image_size, bool patch_mode);

/// Per-slice, per-class IoU of thresholded predictions against the decoded
/// ground truth; class means over slices, then the mean over classes.
MetricReport evaluate(Model& model, std::span<const SliceRecord> records, std::size_t image_size,
                      bool patch_mode, Split split = Split::Validation);

struct TrainOptions {
  /// When set, best.weights and final.weights are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochRecord&)> on_epoch;
  bool patch_mode_eval = false;
};

struct TrainResult {
  EpochHistory history;
  DatasetSplit split;
  std::size_t best_epoch = 0;
  double best_mean_iou = -1.0;
  std::optional<Model> best_model;
};

/// Full training run; `model` ends holding the final-epoch weights.
/// Throws DataError on an empty split and DivergenceError on a non-finite loss.
TrainResult train(Model& model, const DatasetIndex& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

struct ExperimentCell {
  BlockStyle style = BlockStyle::Plain;
  LossTag loss = LossTag::BceTversky;
  double final_validation_iou = 0.0;
  double best_validation_iou = 0.0;
  double final_train_iou = 0.0;
};

struct ExperimentTable {
  std::vector<BlockStyle> styles;
  std::vector<LossTag> losses;
  std::vector<ExperimentCell> cells;  // style-major

  const ExperimentCell& at(BlockStyle style, LossTag loss) const;
  /// Encoder rows by loss columns, final validation IoU in percent.
  std::string to_markdown() const;
  std::string to_csv() const;
};

/// Trains one fresh model per (style, loss) pair with otherwise identical
/// settings.
ExperimentTable run_experiment_grid(std::span<const BlockStyle> styles,
                                    std::span<const LossTag> losses, const UNetConfig& model_base,
                                    const TrainConfig& train_base, const DatasetIndex& dataset);

}  // namespace tractseg
