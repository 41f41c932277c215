// SPDX-License-Identifier: Apache-2.0
#include "tractseg/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

namespace tractseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw DataError(std::string(mode[0] == 'r' ? "cannot open image " : "cannot create image ") +
                        path.string(),
                    {path.string()});
  }
  return f;
}

/// Owns the libpng read structs. The setjmp frames below only touch trivially
/// destructible locals so a longjmp out of libpng is well defined.
class PngReader {
 public:
  explicit PngReader(std::FILE* f) {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png_) info_ = png_create_info_struct(png_);
    if (png_ && info_) png_init_io(png_, f);
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  bool ok() const noexcept { return png_ && info_; }

  bool read_info(PngHeader* out) {
    if (setjmp(png_jmpbuf(png_))) return false;
    png_read_info(png_, info_);
    out->width = png_get_image_width(png_, info_);
    out->height = png_get_image_height(png_, info_);
    out->bit_depth = png_get_bit_depth(png_, info_);
    out->color_type = png_get_color_type(png_, info_);
    out->channels = png_get_channels(png_, info_);
    return true;
  }

  bool read_rows(png_bytep* rows) {
    if (setjmp(png_jmpbuf(png_))) return false;
    png_read_image(png_, rows);
    png_read_end(png_, nullptr);
    return true;
  }

 private:
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

class PngWriter {
 public:
  explicit PngWriter(std::FILE* f) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png_) info_ = png_create_info_struct(png_);
    if (png_ && info_) png_init_io(png_, f);
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  bool ok() const noexcept { return png_ && info_; }

  bool write(png_uint_32 w, png_uint_32 h, int depth, png_bytep* rows) {
    if (setjmp(png_jmpbuf(png_))) return false;
    png_set_IHDR(png_, info_, w, h, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png_, info_);
    png_write_image(png_, rows);
    png_write_end(png_, nullptr);
    return true;
  }

 private:
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

PngHeader header_from(PngReader& reader, const std::filesystem::path& path) {
  if (!reader.ok()) throw DataError("libpng initialisation failed for " + path.string());
  PngHeader h;
  if (!reader.read_info(&h)) {
    throw DataError("not a readable PNG: " + path.string(), {path.string()});
  }
  return h;
}

void write_gray(const std::filesystem::path& path, std::size_t w, std::size_t h, int depth,
                std::vector<png_byte>& bytes) {
  auto f = open_file(path, "wb");
  const std::size_t stride = w * static_cast<std::size_t>(depth / 8);
  std::vector<png_bytep> rows(h);
  for (std::size_t r = 0; r < h; ++r) rows[r] = bytes.data() + r * stride;
  PngWriter writer(f.get());
  if (!writer.ok() || !writer.write(static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                                    depth, rows.data())) {
    throw DataError("failed to encode PNG " + path.string(), {path.string()});
  }
}

}  // namespace

PngHeader read_png_header(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  PngReader reader(f.get());
  return header_from(reader, path);
}

ImageU16 read_png_u16(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  PngReader reader(f.get());
  const PngHeader h = header_from(reader, path);
  if (h.bit_depth != 16 || h.color_type != PNG_COLOR_TYPE_GRAY || h.channels != 1) {
    throw DataError("expected a single-channel 16-bit grayscale PNG, got bit depth " +
                        std::to_string(h.bit_depth) + " with " + std::to_string(h.channels) +
                        " channel(s): " + path.string(),
                    {path.string()});
  }
  std::vector<png_byte> bytes(h.width * h.height * 2);
  std::vector<png_bytep> rows(h.height);
  for (std::size_t r = 0; r < h.height; ++r) rows[r] = bytes.data() + r * h.width * 2;
  if (!reader.read_rows(rows.data())) {
    throw DataError("corrupt PNG data: " + path.string(), {path.string()});
  }
  ImageU16 img(h.height, h.width, 0);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    img.values[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  }
  return img;
}

void write_png_u16(const std::filesystem::path& path, const ImageU16& image) {
  std::vector<png_byte> bytes(image.values.size() * 2);
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    bytes[2 * i] = static_cast<png_byte>(image.values[i] >> 8);
    bytes[2 * i + 1] = static_cast<png_byte>(image.values[i] & 0xff);
  }
  write_gray(path, image.width, image.height, 16, bytes);
}

void write_png_u8(const std::filesystem::path& path, const Grid<std::uint8_t>& image) {
  std::vector<png_byte> bytes(image.values.begin(), image.values.end());
  write_gray(path, image.width, image.height, 8, bytes);
}

}  // namespace tractseg
