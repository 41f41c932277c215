// SPDX-License-Identifier: Apache-2.0
#include "tractseg/fixture.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "tractseg/error.hpp"
#include "tractseg/grid.hpp"
#include "tractseg/png_io.hpp"
#include "tractseg/preprocess.hpp"
#include "tractseg/rle.hpp"

namespace fs = std::filesystem;

namespace tractseg {

namespace {

constexpr std::uint16_t kBody = 6000;
// Painted per class index: large bowel, small bowel, stomach.
constexpr std::array<std::uint16_t, kNumClasses> kOrganLevel = {25000, 15000, 40000};

struct Canvas {
  ImageU16 image;
  Grid<int> owner;  // -1 background, else class index

  Canvas(std::size_t h, std::size_t w) : image(h, w, 0), owner(h, w, -1) {}

  template <typename Inside>
  void paint(int cls, std::uint16_t level, Inside inside) {
    for (std::size_t r = 0; r < image.height; ++r) {
      for (std::size_t c = 0; c < image.width; ++c) {
        if (!inside(static_cast<double>(r) + 0.5, static_cast<double>(c) + 0.5)) continue;
        image.at(r, c) = level;
        owner.at(r, c) = cls;
      }
    }
  }
};

auto ellipse(double cr, double cc, double rr, double rc) {
  return [=](double r, double c) {
    const double dr = (r - cr) / rr, dc = (c - cc) / rc;
    return dr * dr + dc * dc <= 1.0;
  };
}

}  // namespace

FixtureSummary generate_fixture(const fs::path& root, const FixtureOptions& o) {
  if (o.cases < 1 || o.days_per_case < 1 || o.slices_per_day < 1) {
    throw ConfigError("fixture needs at least one case, day and slice");
  }
  if (o.height < 16 || o.width < 16) {
    throw ConfigError("fixture slices must be at least 16x16, got " + dims_str(o.height, o.width));
  }
  fs::create_directories(root);
  FixtureSummary summary;
  summary.root = root;
  summary.annotations = root / "train.csv";
  std::ofstream csv(summary.annotations, std::ios::binary | std::ios::trunc);
  if (!csv) throw DataError("cannot write " + summary.annotations.string(), {summary.annotations.string()});
  csv << "id,class,segmentation\n";

  const double H = static_cast<double>(o.height), W = static_cast<double>(o.width);
  for (std::size_t ci = 1; ci <= o.cases; ++ci) {
    const std::string case_id = "case" + std::to_string(100 + ci);
    for (std::size_t d = 1; d <= o.days_per_case; ++d) {
      const std::string day_id = case_id + "_day" + std::to_string(d);
      const fs::path scans = root / case_id / day_id / "scans";
      fs::create_directories(scans);
      for (std::size_t s = 1; s <= o.slices_per_day; ++s) {
        std::mt19937_64 rng(o.seed * 1000003u + ci * 10007u + d * 101u + s);
        std::uniform_real_distribution<double> jitter(-1.0, 1.0);
        auto j = [&](double scale) { return scale * jitter(rng); };

        Canvas cv(o.height, o.width);
        cv.paint(-1, kBody, ellipse(H * 0.5, W * 0.5, H * 0.46, W * 0.46));
        cv.paint(2, kOrganLevel[2],
                 ellipse(H * (0.30 + j(0.03)), W * (0.32 + j(0.03)), H * (0.13 + j(0.02)),
                         W * (0.15 + j(0.02))));
        {
          const double cr = H * (0.40 + j(0.03)), cc = W * (0.70 + j(0.03));
          const double outer = 0.15 + j(0.015), inner = outer * 0.55;
          cv.paint(0, kOrganLevel[0], [=](double r, double c) {
            const double dr = (r - cr) / H, dc = (c - cc) / W;
            const double q = dr * dr + dc * dc;
            return q <= outer * outer && q >= inner * inner;
          });
        }
        const std::size_t disks = 2 + rng() % 2;
        for (std::size_t k = 0; k < disks; ++k) {
          const double cc = W * (0.28 + 0.22 * static_cast<double>(k) + j(0.03));
          const double rad = 0.055 + j(0.01);
          cv.paint(1, kOrganLevel[1], ellipse(H * (0.74 + j(0.03)), cc, H * rad, W * rad));
        }
        std::uniform_int_distribution<int> noise(-700, 700);
        for (std::size_t i = 0; i < cv.image.size(); ++i) {
          if (cv.image.values[i] != 0) {
            cv.image.values[i] = static_cast<std::uint16_t>(cv.image.values[i] + noise(rng));
          }
        }

        const std::string token = std::string(s < 10 ? "000" : s < 100 ? "00" : s < 1000 ? "0" : "") +
                                  std::to_string(s);
        const fs::path file = scans / ("slice_" + token + "_" + std::to_string(o.width) + "_" +
                                       std::to_string(o.height) + "_1.50_1.50.png");
        write_png_u16(file, cv.image);
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          BinaryMask m(o.height, o.width, 0);
          for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = cv.owner.values[i] == static_cast<int>(k);
          csv << day_id << "_slice_" << token << ',' << kClassNames[k] << ',' << encode_rle(m) << '\n';
        }
        ++summary.slices;
      }
    }
  }
  if (!csv) throw DataError("failed writing " + summary.annotations.string(), {summary.annotations.string()});
  return summary;
}

}  // namespace tractseg
