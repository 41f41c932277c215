// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "tractseg/grid.hpp"

namespace tractseg {

struct PngHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  int bit_depth = 0;
  int color_type = 0;  // libpng PNG_COLOR_TYPE_* value
  int channels = 0;
};

/// Reads only the IHDR chunk. Throws DataError on missing or non-PNG files.
PngHeader read_png_header(const std::filesystem::path& path);

/// Decodes a single-channel 16-bit grayscale PNG without any gamma or
/// range conversion. Other bit depths or colour types throw DataError.
ImageU16 read_png_u16(const std::filesystem::path& path);

void write_png_u16(const std::filesystem::path& path, const ImageU16& image);
void write_png_u8(const std::filesystem::path& path, const Grid<std::uint8_t>& image);

}  // namespace tractseg
