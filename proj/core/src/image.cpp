#include "sirst/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "sirst/errors.hpp"

namespace sirst {

Image::Image(int height, int width, std::vector<double> pixels) : h_(height), w_(width), px_(std::move(pixels)) {
  if (px_.size() != static_cast<std::size_t>(height) * width)
    throw InvalidShapeError("image pixel count does not match extents");
}

Tensor Image::to_tensor() const { return Tensor({1, h_, w_}, px_); }

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3 || t.channels() != 1) throw InvalidShapeError("expected (1,H,W) tensor, got " + shape_str(t.shape()));
  return Image(t.height(), t.width(), std::vector<double>(t.values().begin(), t.values().end()));
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(y, x) = img.at(y, img.width() - 1 - x);
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(y, x) = img.at(img.height() - 1 - y, x);
  return out;
}

Image crop(const Image& img, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || height < 1 || width < 1 || y0 + height > img.height() || x0 + width > img.width())
    throw InvalidShapeError("crop window outside image");
  Image out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  Image out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  for (int y = 0; y < height; ++y) {
    double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    int y0 = std::min(static_cast<int>(fy), img.height() - 1);
    int y1 = std::min(y0 + 1, img.height() - 1);
    double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      int x0 = std::min(static_cast<int>(fx), img.width() - 1);
      int x1 = std::min(x0 + 1, img.width() - 1);
      double ax = fx - x0;
      const double top = (1 - ax) * img.at(y0, x0) + ax * img.at(y0, x1);
      const double bot = (1 - ax) * img.at(y1, x0) + ax * img.at(y1, x1);
      out.at(y, x) = (1 - ay) * top + ay * bot;
    }
  }
  return out;
}

Image resize_nearest(const Image& img, int height, int width) {
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(img.height() - 1, static_cast<int>((y + 0.5) * img.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(img.width() - 1, static_cast<int>((x + 0.5) * img.width() / width));
      out.at(y, x) = img.at(sy, sx);
    }
  }
  return out;
}

std::vector<double> gaussian_kernel5(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  std::vector<double> k(25);
  double total = 0.0;
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>((dy + 2) * 5 + dx + 2)] = v;
      total += v;
    }
  for (double& v : k) v /= total;
  return k;
}

Image gaussian_blur5(const Image& img, double sigma) {
  const auto k = gaussian_kernel5(sigma);
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int dy = -2; dy <= 2; ++dy) {
        const int yy = reflect_index(y + dy, img.height());
        for (int dx = -2; dx <= 2; ++dx)
          s += k[static_cast<std::size_t>((dy + 2) * 5 + dx + 2)] * img.at(yy, reflect_index(x + dx, img.width()));
      }
      out.at(y, x) = s;
    }
  return out;
}

double mean(const Image& img) {
  if (img.empty()) throw InvalidInputError("mean of empty image");
  double s = 0.0;
  for (double v : img.pixels()) s += v;
  return s / static_cast<double>(img.size());
}

double stddev(const Image& img) {
  const double m = mean(img);
  double s = 0.0;
  for (double v : img.pixels()) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(img.size()));
}

Image normalize(const Image& img) {
  const double m = mean(img);
  const double sd = stddev(img);
  Image out(img.height(), img.width());
  // Rounding leaves a tiny nonzero deviation on flat images.
  if (sd <= 1e-12 * std::max(1.0, std::abs(m))) return out;
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = (img[i] - m) / sd;
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_impl(const std::filesystem::path& path, int height, int width, int bit_depth,
                    const std::vector<std::uint8_t>& rows_bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed for '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * (bit_depth / 8);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rows_bytes.data() + static_cast<std::size_t>(y) * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint16_t quantize(double v, double scale) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * scale));
}

}  // namespace

void write_png8_raw(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() != static_cast<std::size_t>(height) * width) throw InvalidShapeError("raw PNG byte count mismatch");
  write_png_impl(path, height, width, 8, bytes);
}

void write_png8(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = static_cast<std::uint8_t>(quantize(img[i], 255.0));
  write_png_impl(path, img.height(), img.width(), 8, bytes);
}

void write_png16(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint16_t q = quantize(img[i], 65535.0);
    bytes[2 * i] = static_cast<std::uint8_t>(q >> 8);  // PNG is big-endian
    bytes[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  write_png_impl(path, img.height(), img.width(), 16, bytes);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed for '" + path.string() + "'");
  }
  std::vector<std::uint8_t> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buf.resize(stride * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* row = rows[static_cast<std::size_t>(y)];
      if (depth == 16) {
        const unsigned v = (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1];
        img.at(y, x) = v / 65535.0;
      } else {
        img.at(y, x) = row[x] / 255.0;
      }
    }
  return img;
}

}  // namespace sirst
