#include "denet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "denet/binary_io.hpp"
#include "denet/errors.hpp"

namespace denet {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

Tensor load_png(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialisation failed");
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw ValidationError(path.string() + ": corrupt PNG");

  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const auto colour = png_get_color_type(png, info);
  if (colour == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (colour == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (colour == PNG_COLOR_TYPE_GRAY || colour == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (colour & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != 3 * w) throw ValidationError(path.string() + ": unsupported PNG layout");
  std::vector<png_byte> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());

  Tensor img({3, h, w});
  auto d = img.mutable_data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) d[(c * h + y) * w + x] = buf[y * rowbytes + 3 * x + c] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, std::size_t w, std::size_t h, int colour_type,
               const std::vector<png_byte>& pixels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialisation failed");
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw IoError("PNG write failed: " + path.string());
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, colour_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = pixels.size() / h;
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * stride);
  png_write_end(png, nullptr);
}

png_byte to_byte(double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Binary (P5/P6) and ASCII (P2/P3) netpbm.
Tensor load_netpbm(const std::filesystem::path& path) {
  const std::string bytes = binio::read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  const bool ascii = magic == "P2" || magic == "P3";
  const bool colour = magic == "P3" || magic == "P6";
  if (!(ascii || magic == "P5" || magic == "P6")) throw ValidationError(path.string() + ": not a PGM/PPM file");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    long v;
    if (!(in >> v) || v < 0) throw ValidationError(path.string() + ": malformed netpbm header");
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255)
    throw ValidationError(path.string() + ": only 8-bit netpbm images are supported");
  const std::size_t channels = colour ? 3 : 1;
  std::vector<std::size_t> samples(w * h * channels);
  if (ascii) {
    for (auto& s : samples) s = next_int();
  } else {
    in.get();  // single whitespace after maxval
    std::string raw(samples.size(), '\0');
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size())))
      throw ValidationError(path.string() + ": truncated netpbm pixel data");
    for (std::size_t i = 0; i < raw.size(); ++i) samples[i] = static_cast<unsigned char>(raw[i]);
  }
  Tensor img({3, h, w});
  auto d = img.mutable_data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t s = samples[(y * w + x) * channels + (colour ? c : 0)];
        d[(c * h + y) * w + x] = static_cast<double>(s) / static_cast<double>(maxval);
      }
  return img;
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  auto f = open_file(path, "rb");
  unsigned char sig[8] = {};
  const auto n = std::fread(sig, 1, 8, f.get());
  f.reset();
  if (n == 8 && png_sig_cmp(sig, 0, 8) == 0) return load_png(path);
  if (n >= 2 && sig[0] == 'P') return load_netpbm(path);
  throw ValidationError(path.string() + ": unsupported image format (expected PNG, PGM or PPM)");
}

void save_png_rgb(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("save_png_rgb: expected [3,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> px(3 * w * h);
  const auto d = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) px[(y * w + x) * 3 + c] = to_byte(d[(c * h + y) * w + x]);
  write_png(path, w, h, PNG_COLOR_TYPE_RGB, px);
}

void save_density_png(const std::filesystem::path& path, const DensityGrid& grid) {
  double peak = 0.0;
  for (double v : grid.values) peak = std::max(peak, v);
  std::vector<png_byte> px(grid.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = peak > 0.0 ? to_byte(grid.values[i] / peak) : 0;
  write_png(path, grid.width, grid.height, PNG_COLOR_TYPE_GRAY, px);
}

}  // namespace denet
