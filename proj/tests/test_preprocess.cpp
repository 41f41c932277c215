// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "tractseg/error.hpp"
#include "tractseg/losses.hpp"
#include "tractseg/preprocess.hpp"

using namespace tractseg;

namespace {

ImageU16 random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  ImageU16 img(h, w, std::uint16_t{0});
  std::uniform_int_distribution<int> d(0, 65535);
  for (auto& v : img.values) v = static_cast<std::uint16_t>(d(rng));
  return img;
}

// Content block of random nonzero values inside a zero frame.
ImageU16 framed_image(std::size_t h, std::size_t w, std::size_t top, std::size_t left,
                      std::size_t bottom, std::size_t right, std::mt19937_64& rng) {
  ImageU16 img(h, w, std::uint16_t{0});
  std::uniform_int_distribution<int> d(1, 65535);
  for (std::size_t r = top; r < h - bottom; ++r)
    for (std::size_t c = left; c < w - right; ++c) img.at(r, c) = static_cast<std::uint16_t>(d(rng));
  return img;
}

std::multiset<std::uint16_t> nonzero_values(const ImageU16& img) {
  std::multiset<std::uint16_t> s;
  for (auto v : img.values)
    if (v) s.insert(v);
  return s;
}

std::uint64_t pixel_sum(const ImageU16& img) {
  std::uint64_t s = 0;
  for (auto v : img.values) s += v;
  return s;
}

}  // namespace

TEST_SUITE("trim_and_pad") {
  TEST_CASE("266x266 gains an 11-pixel zero border on every side") {
    std::mt19937_64 rng(1);
    const ImageU16 img = framed_image(266, 266, 0, 0, 0, 0, rng);
    const auto [out, rec] = trim_and_pad(img);
    REQUIRE(out.height == 288);
    REQUIRE(out.width == 288);
    CHECK(rec.rows.pad_before == 11);
    CHECK(rec.rows.pad_after == 11);
    CHECK(rec.cols.pad_before == 11);
    for (std::size_t r = 0; r < 288; ++r)
      for (std::size_t c = 0; c < 288; ++c) {
        const bool inside = r >= 11 && r < 277 && c >= 11 && c < 277;
        if (inside) {
          CHECK(out.at(r, c) == img.at(r - 11, c - 11));
        } else if (out.at(r, c) != 0) {
          FAIL("border pixel " << r << "," << c << " is not zero");
        }
      }
  }

  TEST_CASE("288x288 is unchanged with an identity record") {
    std::mt19937_64 rng(2);
    const ImageU16 img = random_image(288, 288, rng);
    const auto [out, rec] = trim_and_pad(img);
    CHECK(out == img);
    CHECK(rec.is_identity());
  }

  TEST_CASE("odd padding puts the extra pixel at the bottom and right") {
    std::mt19937_64 rng(3);
    const auto [out, rec] = trim_and_pad(framed_image(285, 281, 0, 0, 0, 0, rng));
    CHECK(rec.rows.pad_before == 1);
    CHECK(rec.rows.pad_after == 2);
    CHECK(rec.cols.pad_before == 3);
    CHECK(rec.cols.pad_after == 4);
  }

  TEST_CASE("310x310 with 15-pixel zero frame keeps every nonzero pixel") {
    std::mt19937_64 rng(4);
    const ImageU16 img = framed_image(310, 310, 15, 15, 15, 15, rng);
    const auto [out, rec] = trim_and_pad(img);
    CHECK(out.height == 288);
    CHECK(out.width == 288);
    CHECK_FALSE(rec.center_cropped());
    CHECK(nonzero_values(out) == nonzero_values(img));
    CHECK(pixel_sum(out) == pixel_sum(img));
  }

  TEST_CASE("trimming alternates edges and stops at the target") {
    std::mt19937_64 rng(5);
    const auto [out, rec] = trim_and_pad(framed_image(293, 288, 10, 0, 1, 0, rng));
    CHECK(rec.rows.trim_before + rec.rows.trim_after == 5);
    CHECK(rec.rows.trim_after == 1);
    CHECK(rec.rows.trim_before == 4);
    CHECK(out.height == 288);
  }

  TEST_CASE("nonzero overflow is center-cropped") {
    std::mt19937_64 rng(6);
    const ImageU16 img = random_image(300, 100, rng);
    const auto [out, rec] = trim_and_pad(img);
    CHECK(out.height == 288);
    CHECK(out.width == 288);
    CHECK(rec.center_cropped());
    CHECK(rec.rows.crop_before == 6);
    CHECK(rec.rows.crop_after == 6);
    CHECK(out.at(0, 94) == img.at(6, 0));
  }

  TEST_CASE("random inputs always give 288x288 and keep content that fits") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> dim(100, 420);
    for (int i = 0; i < 60; ++i) {
      const std::size_t h = dim(rng), w = dim(rng);
      const std::size_t ch = std::min<std::size_t>(h, 1 + rng() % 288), cw = std::min<std::size_t>(w, 1 + rng() % 288);
      const std::size_t top = rng() % (h - ch + 1), left = rng() % (w - cw + 1);
      const ImageU16 img = framed_image(h, w, top, left, h - ch - top, w - cw - left, rng);
      const auto [out, rec] = trim_and_pad(img);
      REQUIRE(out.height == 288);
      REQUIRE(out.width == 288);
      CHECK(nonzero_values(out) == nonzero_values(img));
      CHECK(invert_record(out, rec) == img);
    }
  }

  TEST_CASE("masks follow the image transform pixel by pixel") {
    std::mt19937_64 rng(8);
    const ImageU16 img = framed_image(300, 250, 7, 0, 5, 0, rng);
    const auto [out, rec] = trim_and_pad(img);
    BinaryMask mask(300, 250, std::uint8_t{0});
    for (int k = 0; k < 200; ++k) mask.at(7 + rng() % 288, rng() % 250) = 1;
    const auto moved = apply_record_to_mask(mask, rec);
    CHECK(moved.dropped_pixels == 0);
    CHECK(popcount(moved.mask) == popcount(mask));
    for (std::size_t r = 0; r < 300; ++r)
      for (std::size_t c = 0; c < 250; ++c)
        if (mask.at(r, c)) {
          CHECK(moved.mask.at(r - rec.rows.trim_before + rec.rows.pad_before,
                              c - rec.cols.trim_before + rec.cols.pad_before) == 1);
        }
  }

  TEST_CASE("empty mask stays empty and dims are checked") {
    std::mt19937_64 rng(9);
    const auto [out, rec] = trim_and_pad(framed_image(200, 300, 0, 5, 0, 7, rng));
    CHECK(popcount(apply_record_to_mask(BinaryMask(200, 300, std::uint8_t{0}), rec).mask) == 0);
    CHECK_THROWS_AS(apply_record_to_mask(BinaryMask(201, 300, std::uint8_t{0}), rec), DimensionError);
  }

  TEST_CASE("mask pixels in trimmed lines are counted") {
    std::mt19937_64 rng(10);
    const auto [out, rec] = trim_and_pad(framed_image(290, 288, 1, 0, 1, 0, rng));
    BinaryMask mask(290, 288, std::uint8_t{0});
    mask.at(0, 3) = mask.at(289, 4) = mask.at(100, 100) = 1;
    CHECK(apply_record_to_mask(mask, rec).dropped_pixels == 2);
  }
}

TEST_SUITE("normalize") {
  TEST_CASE("constant image maps to zeros") {
    for (float v : normalize(ImageU16(5, 7, std::uint16_t{1234})).values) CHECK(v == 0.0f);
  }

  TEST_CASE("(0, 65535) maps to (0, 1)") {
    FloatGrid g = normalize(ImageU16(1, 2, std::vector<std::uint16_t>{0, 65535}));
    CHECK(g.values[0] == 0.0f);
    CHECK(g.values[1] == 1.0f);
  }

  TEST_CASE("random images land in [0, 1] with both ends hit") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) {
      FloatGrid g = normalize(random_image(17, 23, rng));
      float lo = 1.0f, hi = 0.0f;
      for (float v : g.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      CHECK(lo == 0.0f);
      CHECK(hi == 1.0f);
    }
  }
}

TEST_SUITE("flip") {
  TEST_CASE("double flip is the identity on the joint sample") {
    std::mt19937_64 rng(12);
    SliceSample s;
    s.image = normalize(random_image(9, 13, rng));
    for (auto& m : s.masks) {
      m = BinaryMask(9, 13, std::uint8_t{0});
      for (auto& v : m.values) v = rng() & 1;
    }
    for (auto axis : {FlipAxis::Horizontal, FlipAxis::Vertical}) {
      const SliceSample once = flip(s, axis);
      CHECK_FALSE(once == s);
      CHECK(flip(once, axis) == s);
    }
  }

  TEST_CASE("horizontal flip mirrors columns, vertical mirrors rows") {
    BinaryMask m(2, 3, std::vector<std::uint8_t>{1, 0, 0, 0, 0, 1});
    CHECK(flip(m, FlipAxis::Horizontal).values == std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0});
    CHECK(flip(m, FlipAxis::Vertical).values == std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0});
    BinaryMask n(2, 3, std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0});
    CHECK(flip(n, FlipAxis::Vertical).values == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 0});
  }

  TEST_CASE("symmetric image is a fixed point") {
    ImageU16 img(3, 4, std::vector<std::uint16_t>{1, 2, 2, 1, 5, 6, 6, 5, 1, 2, 2, 1});
    CHECK(flip(img, FlipAxis::Horizontal) == img);
    CHECK(flip(img, FlipAxis::Vertical) == img);
  }

  TEST_CASE("IoU is invariant when prediction and truth flip together") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20; ++i) {
      BinaryMask a(11, 8, std::uint8_t{0}), b(11, 8, std::uint8_t{0});
      for (auto& v : a.values) v = rng() % 3 == 0;
      for (auto& v : b.values) v = rng() % 2 == 0;
      for (auto axis : {FlipAxis::Horizontal, FlipAxis::Vertical})
        CHECK(iou_hard(flip(a, axis), flip(b, axis)) == iou_hard(a, b));
    }
  }
}

TEST_SUITE("patches") {
  TEST_CASE("288x288 gives one patch at the origin") {
    const auto layout = make_patch_layout(288, 288);
    REQUIRE(layout.placements.size() == 1);
    CHECK(layout.placements[0] == PatchPlacement{0, 0});
  }

  TEST_CASE("576x288 gives patches at (0,0) and (288,0)") {
    const auto layout = make_patch_layout(576, 288);
    CHECK(layout.placements == std::vector<PatchPlacement>{{0, 0}, {288, 0}});
  }

  TEST_CASE("400x400 gives offsets {0,112} x {0,112}") {
    const auto layout = make_patch_layout(400, 400);
    CHECK(layout.placements == std::vector<PatchPlacement>{{0, 0}, {0, 112}, {112, 0}, {112, 112}});
  }

  TEST_CASE("window offsets cover the axis and stay inside it") {
    for (std::size_t len = 288; len <= 1200; len += 37) {
      const auto offs = window_offsets(len, 288);
      std::vector<int> covered(len, 0);
      for (auto o : offs) {
        REQUIRE(o + 288 <= len);
        for (std::size_t i = o; i < o + 288; ++i) covered[i] = 1;
      }
      CHECK(std::count(covered.begin(), covered.end(), 1) == static_cast<long>(len));
      CHECK(offs.back() == len - 288);
    }
  }

  TEST_CASE("undersized inputs are rejected") {
    CHECK_THROWS_AS(make_patch_layout(287, 400), DimensionError);
    CHECK_THROWS_AS(make_patches(FloatGrid(400, 100, 0.0f)), DimensionError);
  }

  TEST_CASE("overlap of 0.2 and 0.6 stitches to 0.4") {
    const auto layout = make_patch_layout(300, 288);
    std::vector<FloatGrid> patches{FloatGrid(288, 288, 0.2f), FloatGrid(288, 288, 0.6f)};
    const FloatGrid out = stitch_patches(patches, layout);
    CHECK(out.at(0, 0) == doctest::Approx(0.2));
    CHECK(out.at(100, 5) == doctest::Approx(0.4));
    CHECK(out.at(299, 5) == doctest::Approx(0.6));
  }

  TEST_CASE("stitching mismatched patches is rejected") {
    const auto layout = make_patch_layout(300, 288);
    std::vector<FloatGrid> one{FloatGrid(288, 288, 0.2f)};
    CHECK_THROWS_AS(stitch_patches(one, layout), DimensionError);
    std::vector<FloatGrid> wrong{FloatGrid(288, 288, 0.2f), FloatGrid(200, 288, 0.2f)};
    CHECK_THROWS_AS(stitch_patches(wrong, layout), DimensionError);
  }

  TEST_CASE("stitch after make_patches reproduces random grids within 1 ulp") {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<std::size_t> dim(320, 512);
    std::uniform_real_distribution<float> val(0.0f, 1.0f);
    for (int i = 0; i < 6; ++i) {
      FloatGrid g(dim(rng), dim(rng), 0.0f);
      for (auto& v : g.values) v = val(rng);
      auto [patches, layout] = make_patches(g);
      const FloatGrid back = stitch_patches(patches, layout);
      REQUIRE(back.same_dims(g));
      for (std::size_t k = 0; k < g.size(); ++k) {
        const float a = g.values[k], b = back.values[k];
        if (a != b && std::nextafter(a, b) != b) FAIL("pixel " << k << ": " << a << " vs " << b);
      }
    }
  }
}
