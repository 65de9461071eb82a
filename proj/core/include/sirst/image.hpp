#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sirst/tensor.hpp"

namespace sirst {

/// Single-channel float image, row-major.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h_(height), w_(width), px_(static_cast<std::size_t>(height) * width, fill) {}
  Image(int height, int width, std::vector<double> pixels);

  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t size() const noexcept { return px_.size(); }
  bool empty() const noexcept { return px_.empty(); }

  double& at(int y, int x) { return px_[static_cast<std::size_t>(y) * w_ + x]; }
  double at(int y, int x) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }
  double& operator[](std::size_t i) { return px_[i]; }
  double operator[](std::size_t i) const { return px_[i]; }
  std::vector<double>& pixels() noexcept { return px_; }
  const std::vector<double>& pixels() const noexcept { return px_; }

  /// (1, H, W) tensor view copy.
  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t);

  bool operator==(const Image&) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<double> px_;
};

/// Mirror index without repeating the edge sample (… 2 1 | 0 1 2 … n-1 | n-2 …).
int reflect_index(int i, int n);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image crop(const Image& img, int y0, int x0, int height, int width);
Image resize_bilinear(const Image& img, int height, int width);
Image resize_nearest(const Image& img, int height, int width);

/// Normalized 5x5 Gaussian kernel, row-major.
std::vector<double> gaussian_kernel5(double sigma);
/// 5x5 Gaussian blur with reflect padding; kernel sums to 1.
Image gaussian_blur5(const Image& img, double sigma);

double mean(const Image& img);
/// Population standard deviation.
double stddev(const Image& img);
/// Zero mean, unit variance; a flat image maps to zeros.
Image normalize(const Image& img);

// PNG interchange. 8-bit images store round(v * 255) of values clamped to
// [0, 1]; 16-bit images store round(v * 65535).
void write_png8(const std::filesystem::path& path, const Image& img);
void write_png16(const std::filesystem::path& path, const Image& img);
void write_png8_raw(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& bytes);
/// Reads a grayscale (or gray+alpha / RGB, converted) PNG to [0, 1].
Image read_png(const std::filesystem::path& path);

}  // namespace sirst
