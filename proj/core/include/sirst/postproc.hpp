#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sirst/image.hpp"

namespace sirst {

/// Binary H x W mask with values in {0, 1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width) : h_(height), w_(width), bits_(static_cast<std::size_t>(height) * width, 0) {}
  BinaryMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t size() const noexcept { return bits_.size(); }
  bool get(int y, int x) const { return bits_[static_cast<std::size_t>(y) * w_ + x] != 0; }
  void set(int y, int x, bool v = true) { bits_[static_cast<std::size_t>(y) * w_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::size_t popcount() const;

  /// Pixels > 0.5 in a [0, 1] image (e.g. a stored ground-truth mask).
  static BinaryMask from_image(const Image& img);
  Image to_image() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct Pixel {
  int row;
  int col;
  bool operator==(const Pixel&) const = default;
};

struct Component {
  int id = 0;
  std::vector<Pixel> pixels;  // row-major order
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  int area() const noexcept { return static_cast<int>(pixels.size()); }
  /// Inclusive bounding box: row0, col0, row1, col1.
  std::array<int, 4> bbox() const;
};

struct DetectionSet {
  std::vector<Component> components;
  int height = 0;
  int width = 0;
};

/// prob > t.
BinaryMask threshold_fixed(const Image& prob, double t);

struct AdaptiveThreshold {
  BinaryMask mask;
  double threshold;
};
/// t = max(0.7 * max(G), 0.5 * std(G) + mean(G)); mask = G > t.
AdaptiveThreshold threshold_adaptive(const Image& response);

/// Eight-connected component labelling. Component ids follow the row-major
/// order of each component's first pixel.
DetectionSet label8(const BinaryMask& mask);

std::vector<std::pair<double, double>> centroids(const DetectionSet& set);

/// {"height","width","components":[{"id","area","centroid":[r,c],"bbox":[r0,c0,r1,c1]}]}
std::string detections_to_json(const DetectionSet& set);
/// Parses the JSON above. Pixel lists are not stored, so components come
/// back with empty pixel vectors and explicit area/centroid.
struct DetectionSummary {
  int id;
  int area;
  double centroid_row;
  double centroid_col;
  std::array<int, 4> bbox;
};
std::vector<DetectionSummary> detections_from_json(const std::string& text);

}  // namespace sirst
