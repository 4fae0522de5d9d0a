#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "transcues/data.hpp"

namespace transcues::data {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void check_image(const Image8& image, int channels, const std::filesystem::path& path) {
  if (image.channels != channels || image.height <= 0 || image.width <= 0 ||
      static_cast<Index>(image.pixels.size()) != image.height * image.width * channels) {
    throw ShapeError("cannot write " + path.string() + ": malformed " + std::to_string(channels) + "-channel image");
  }
}

void write_simple(const std::filesystem::path& path, const Image8& image, png_uint_32 format) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = format;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    throw IoError("cannot write " + path.string() + ": " + message);
  }
}

}  // namespace

Image8 read_rgb_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read image " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image8 out{png.height, png.width, 3, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    throw IoError("cannot decode image " + path.string() + ": " + message);
  }
  return out;
}

Image8 read_label_png(const std::filesystem::path& path) {
  File file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Image8 out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode mask " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if ((color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) || depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("mask " + path.string() + " is not an 8-bit indexed or gray image");
  }
  if (depth < 8) png_set_packing(png);
  png_read_update_info(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.channels = 1;
  out.pixels.resize(static_cast<std::size_t>(out.height * out.width));
  rows.resize(static_cast<std::size_t>(out.height));
  for (Index y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * out.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_rgb_png(const std::filesystem::path& path, const Image8& image) {
  check_image(image, 3, path);
  write_simple(path, image, PNG_FORMAT_RGB);
}

void write_gray_png(const std::filesystem::path& path, const Image8& image) {
  check_image(image, 1, path);
  write_simple(path, image, PNG_FORMAT_GRAY);
}

void write_label_png(const std::filesystem::path& path, const Image8& labels) {
  check_image(labels, 1, path);
  File file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_color> palette(256);
  for (int i = 0; i < 256; ++i) {
    // Well separated colours for small ids, gray ramp afterwards.
    static constexpr std::uint8_t kBase[8][3] = {{0, 0, 0},     {0, 160, 255}, {255, 96, 0},  {60, 200, 60},
                                                 {200, 40, 160}, {240, 220, 0}, {0, 220, 200}, {140, 90, 50}};
    const auto* c = i < 8 ? kBase[i] : nullptr;
    palette[i] = c ? png_color{c[0], c[1], c[2]}
                   : png_color{static_cast<png_byte>(i), static_cast<png_byte>(i), static_cast<png_byte>(i)};
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(labels.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot write mask " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(labels.width), static_cast<png_uint_32>(labels.height), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(png, info, palette.data(), 256);
  png_write_info(png, info);
  for (Index y = 0; y < labels.height; ++y) {
    rows[y] = const_cast<png_bytep>(labels.pixels.data() + y * labels.width);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace transcues::data
