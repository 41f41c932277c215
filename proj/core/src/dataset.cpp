// SPDX-License-Identifier: Apache-2.0
#include "tractseg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <tuple>

#include "tractseg/png_io.hpp"
#include "tractseg/rle.hpp"

namespace fs = std::filesystem;

namespace tractseg {

namespace {

const std::regex kCaseDir(R"(case(\d+))");
const std::regex kDayDir(R"(case(\d+)_day(\d+))");
const std::regex kSliceFile(R"(slice_(\d+)_(\d+)_(\d+)_(\d+(?:\.\d+)?)_(\d+(?:\.\d+)?)\.png)");
const std::regex kSliceId(R"(case(\d+)_day(\d+)_slice_(\d+))");

auto sort_key(const SliceRecord& r) { return std::tuple(r.case_number, r.day, r.slice_index); }

std::string trim_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

std::vector<fs::path> sorted_children(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

[[noreturn]] void fail(const std::string& what, const std::vector<std::string>& offenders) {
  std::string msg = what + ":";
  for (const auto& o : offenders) msg += "\n  " + o;
  throw DataError(msg, offenders);
}

}  // namespace

std::string SliceRecord::id() const { return case_id + "_day" + std::to_string(day) + "_slice_" + slice_token; }

std::vector<std::string> DatasetIndex::case_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (ids.empty() || ids.back() != r.case_id) ids.push_back(r.case_id);
  }
  return ids;
}

const SliceRecord* DatasetIndex::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id() == id) return &r;
  }
  return nullptr;
}

std::optional<std::size_t> class_index(std::string_view name) {
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    if (kClassNames[k] == name) return k;
  }
  return std::nullopt;
}

std::optional<SliceKey> parse_slice_id(std::string_view id) {
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(id.begin(), id.end(), m, kSliceId)) return std::nullopt;
  SliceKey key;
  key.case_number = std::stoi(m[1].str());
  key.case_id = "case" + m[1].str();
  key.day = std::stoi(m[2].str());
  key.slice_token = m[3].str();
  key.slice_index = std::stoi(key.slice_token);
  return key;
}

std::vector<AnnotationRow> read_annotations(const fs::path& csv) {
  std::ifstream is(csv);
  if (!is) throw DataError("cannot open annotation file " + csv.string(), {csv.string()});
  std::string line;
  if (!std::getline(is, line)) {
    throw DataError("annotation file is empty (missing header): " + csv.string(), {csv.string()});
  }
  line = trim_cr(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line = line.substr(3);
  if (line != "id,class,segmentation") {
    throw DataError("annotation header must be 'id,class,segmentation', got '" + line +
                        "' in " + csv.string(),
                    {csv.string()});
  }
  std::vector<AnnotationRow> rows;
  std::vector<std::string> bad;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      bad.push_back(csv.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
      continue;
    }
    rows.push_back({unquote(line.substr(0, c1)), unquote(line.substr(c1 + 1, c2 - c1 - 1)),
                    unquote(line.substr(c2 + 1)), lineno});
  }
  if (!bad.empty()) fail("malformed annotation rows", bad);
  return rows;
}

DatasetIndex ingest(const fs::path& root) { return ingest(root, fs::path{}); }

DatasetIndex ingest(const fs::path& root, const fs::path& annotations) {
  if (!fs::is_directory(root)) {
    throw DataError("dataset root is not a directory: " + root.string(), {root.string()});
  }
  DatasetIndex index;
  std::vector<std::string> bad_names, mismatched;
  for (const auto& case_dir : sorted_children(root)) {
    std::smatch cm;
    const std::string case_name = case_dir.filename().string();
    if (!fs::is_directory(case_dir) || !std::regex_match(case_name, cm, kCaseDir)) continue;
    for (const auto& day_dir : sorted_children(case_dir)) {
      if (!fs::is_directory(day_dir)) continue;
      std::smatch dm;
      const std::string day_name = day_dir.filename().string();
      if (!std::regex_match(day_name, dm, kDayDir) || dm[1].str() != cm[1].str()) {
        bad_names.push_back(day_dir.string() + " (expected " + case_name + "_day{D})");
        continue;
      }
      const fs::path scans = day_dir / "scans";
      if (!fs::is_directory(scans)) continue;
      for (const auto& file : sorted_children(scans)) {
        std::smatch sm;
        const std::string fname = file.filename().string();
        if (!std::regex_match(fname, sm, kSliceFile)) {
          bad_names.push_back(file.string());
          continue;
        }
        SliceRecord r;
        r.case_id = case_name;
        r.case_number = std::stoi(cm[1].str());
        r.day = std::stoi(dm[2].str());
        r.slice_token = sm[1].str();
        r.slice_index = std::stoi(r.slice_token);
        r.width = std::stoul(sm[2].str());
        r.height = std::stoul(sm[3].str());
        r.pixel_spacing = {std::stod(sm[4].str()), std::stod(sm[5].str())};
        r.image_path = file;
        if (r.slice_index < 1 || r.width == 0 || r.height == 0) {
          bad_names.push_back(file.string() + " (slice index and dimensions must be positive)");
          continue;
        }
        PngHeader h;
        try {
          h = read_png_header(file);
        } catch (const DataError& e) {
          mismatched.push_back(file.string() + " (" + e.what() + ")");
          continue;
        }
        if (h.width != r.width || h.height != r.height) {
          mismatched.push_back(file.string() + " (filename says " + std::to_string(r.width) +
                               "x" + std::to_string(r.height) + " WxH, header says " +
                               std::to_string(h.width) + "x" + std::to_string(h.height) + ")");
          continue;
        }
        index.records.push_back(std::move(r));
      }
    }
  }
  if (!bad_names.empty()) fail("malformed dataset paths", bad_names);
  if (!mismatched.empty()) fail("image header does not match filename dimensions", mismatched);

  std::stable_sort(index.records.begin(), index.records.end(),
                   [](const SliceRecord& a, const SliceRecord& b) { return sort_key(a) < sort_key(b); });
  std::vector<std::string> dups;
  for (std::size_t i = 1; i < index.records.size(); ++i) {
    if (sort_key(index.records[i]) == sort_key(index.records[i - 1])) {
      dups.push_back(index.records[i - 1].image_path.string() + " <-> " +
                     index.records[i].image_path.string());
    }
  }
  if (!dups.empty()) fail("duplicate (case, day, slice) keys", dups);

  if (annotations.empty()) return index;

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < index.records.size(); ++i) by_id.emplace(index.records[i].id(), i);
  std::vector<std::string> bad_rows;
  for (auto& row : read_annotations(annotations)) {
    const std::string where =
        annotations.string() + ":" + std::to_string(row.line) + " (" + row.id + ", " + row.class_name + ")";
    auto it = by_id.find(row.id);
    if (it == by_id.end()) {
      bad_rows.push_back(where + ": no slice image with this id");
      continue;
    }
    auto k = class_index(row.class_name);
    if (!k) {
      bad_rows.push_back(where + ": unknown class");
      continue;
    }
    SliceRecord& r = index.records[it->second];
    if (r.rle[*k]) {
      bad_rows.push_back(where + ": duplicate annotation row");
      continue;
    }
    try {
      parse_runs(row.segmentation, r.height * r.width);
    } catch (const RleParseError& e) {
      bad_rows.push_back(where + ": " + e.what());
      continue;
    }
    r.rle[*k] = std::move(row.segmentation);
  }
  if (!bad_rows.empty()) fail("invalid annotation rows", bad_rows);
  return index;
}

ImageU16 load_image(const SliceRecord& record) {
  ImageU16 img = read_png_u16(record.image_path);
  if (img.height != record.height || img.width != record.width) {
    throw DataError("image " + record.image_path.string() + " is " +
                        dims_str(img.height, img.width) + " (HxW), record expects " +
                        dims_str(record.height, record.width),
                    {record.image_path.string()});
  }
  return img;
}

BinaryMask decode_mask(const SliceRecord& record, std::size_t class_idx) {
  const auto& rle = record.rle.at(class_idx);
  return decode_rle(rle ? *rle : std::string_view{}, record.height, record.width);
}

std::array<BinaryMask, kNumClasses> decode_masks(const SliceRecord& record) {
  std::array<BinaryMask, kNumClasses> out;
  for (std::size_t k = 0; k < kNumClasses; ++k) out[k] = decode_mask(record, k);
  return out;
}

void write_predictions(std::span<const SliceRecord> records,
                       std::span<const std::array<BinaryMask, kNumClasses>> masks,
                       const fs::path& out) {
  if (records.size() != masks.size()) {
    throw DimensionError("write_predictions: " + std::to_string(records.size()) +
                         " records but " + std::to_string(masks.size()) + " mask sets");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      const auto& m = masks[i][k];
      if (m.height != records[i].height || m.width != records[i].width) {
        throw DimensionError("write_predictions: " + records[i].id() + " " +
                             std::string(kClassNames[k]) + " mask is " +
                             dims_str(m.height, m.width) + ", slice is " +
                             dims_str(records[i].height, records[i].width));
      }
    }
  }
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write predictions to " + out.string(), {out.string()});
  os << "id,class,segmentation\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string id = records[i].id();
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      os << id << ',' << kClassNames[k] << ',' << encode_rle(masks[i][k]) << '\n';
    }
  }
  if (!os) throw DataError("failed writing predictions to " + out.string(), {out.string()});
}

}  // namespace tractseg
