// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tractseg/grid.hpp"
#include "tractseg/preprocess.hpp"

namespace tractseg {

/// One scan slice on disk.
///
/// Layout: <root>/case{N}/case{N}_day{D}/scans/slice_{S}_{W}_{H}_{sx}_{sy}.png
/// with W, H in pixels and sx, sy the pixel spacing in mm.
struct SliceRecord {
  std::string case_id;  // "case{N}"
  int case_number = 0;
  int day = 0;
  int slice_index = 0;       // >= 1
  std::string slice_token;   // slice number exactly as written in the filename
  std::filesystem::path image_path;
  std::size_t height = 0;
  std::size_t width = 0;
  std::pair<double, double> pixel_spacing{0.0, 0.0};
  /// Per class (large bowel, small bowel, stomach); nullopt when the
  /// annotation file has no row for that class. Decoded lazily.
  std::array<std::optional<std::string>, kNumClasses> rle;

  /// Annotation id, "case{N}_day{D}_slice_{S}".
  std::string id() const;
};

/// Records sorted by (case, day, slice). Keys are unique.
struct DatasetIndex {
  std::vector<SliceRecord> records;

  /// Distinct case ids in record order.
  std::vector<std::string> case_ids() const;
  const SliceRecord* find(std::string_view id) const;
};

/// Index of an organ class name ("large_bowel", "small_bowel", "stomach").
std::optional<std::size_t> class_index(std::string_view name);

struct SliceKey {
  std::string case_id;
  int case_number = 0;
  int day = 0;
  int slice_index = 0;
  std::string slice_token;
};

/// Parses "case{N}_day{D}_slice_{S}". Returns nullopt on malformed ids.
std::optional<SliceKey> parse_slice_id(std::string_view id);

struct AnnotationRow {
  std::string id;
  std::string class_name;
  std::string segmentation;
  std::size_t line = 0;  // 1-based line number in the file
};

/// Reads an `id,class,segmentation` CSV. Header required.
std::vector<AnnotationRow> read_annotations(const std::filesystem::path& csv);

/// Walks the directory tree and joins it with the annotation CSV.
/// Throws DataError listing every malformed filename, duplicate key,
/// header/filename dimension mismatch or invalid annotation row.
DatasetIndex ingest(const std::filesystem::path& root, const std::filesystem::path& annotations);

/// Same, with no annotation file: all masks empty.
DatasetIndex ingest(const std::filesystem::path& root);

/// Decodes a 16-bit slice and checks it against the record's dimensions.
ImageU16 load_image(const SliceRecord& record);

/// Strict decode of one class mask; missing annotations give an empty mask.
BinaryMask decode_mask(const SliceRecord& record, std::size_t class_idx);
std::array<BinaryMask, kNumClasses> decode_masks(const SliceRecord& record);

/// Writes `id,class,segmentation` rows, three per record in record order.
/// Every mask must have its record's dimensions.
void write_predictions(std::span<const SliceRecord> records,
                       std::span<const std::array<BinaryMask, kNumClasses>> masks,
                       const std::filesystem::path& out);

}  // namespace tractseg
