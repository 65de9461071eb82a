#include "sirst/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "sirst/errors.hpp"

namespace sirst {

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> bits)
    : h_(height), w_(width), bits_(std::move(bits)) {
  if (bits_.size() != static_cast<std::size_t>(height) * width)
    throw InvalidShapeError("mask bit count does not match extents");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::from_image(const Image& img) {
  BinaryMask m(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) m.bits_[i] = img[i] > 0.5 ? 1 : 0;
  return m;
}

Image BinaryMask::to_image() const {
  Image img(h_, w_);
  for (std::size_t i = 0; i < bits_.size(); ++i) img[i] = bits_[i];
  return img;
}

std::array<int, 4> Component::bbox() const {
  std::array<int, 4> b{pixels.front().row, pixels.front().col, pixels.front().row, pixels.front().col};
  for (const auto& p : pixels) {
    b[0] = std::min(b[0], p.row);
    b[1] = std::min(b[1], p.col);
    b[2] = std::max(b[2], p.row);
    b[3] = std::max(b[3], p.col);
  }
  return b;
}

BinaryMask threshold_fixed(const Image& prob, double t) {
  BinaryMask m(prob.height(), prob.width());
  for (int y = 0; y < prob.height(); ++y)
    for (int x = 0; x < prob.width(); ++x) m.set(y, x, prob.at(y, x) > t);
  return m;
}

AdaptiveThreshold threshold_adaptive(const Image& response) {
  if (response.empty()) throw InvalidInputError("adaptive threshold of an empty map");
  const double peak = *std::max_element(response.pixels().begin(), response.pixels().end());
  const double t = std::max(peak * 0.7, 0.5 * stddev(response) + mean(response));
  return {threshold_fixed(response, t), t};
}

namespace {

// Union-find over provisional labels.
struct Forest {
  std::vector<int> parent;
  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Keep the smaller (earlier) label as root.
    if (b < a) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
  }
};

}  // namespace

DetectionSet label8(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  std::vector<int> label(mask.size(), -1);
  Forest forest;
  // First pass: provisional labels from the already-scanned half neighbourhood.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.get(y, x)) continue;
      int current = -1;
      const int ny[4] = {y, y - 1, y - 1, y - 1};
      const int nx[4] = {x - 1, x - 1, x, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || nx[k] < 0 || nx[k] >= w) continue;
        const int l = label[static_cast<std::size_t>(ny[k]) * w + nx[k]];
        if (l < 0) continue;
        if (current < 0) current = l;
        else forest.unite(current, l);
      }
      if (current < 0) current = forest.make();
      label[static_cast<std::size_t>(y) * w + x] = current;
    }
  }
  // Second pass: resolve roots and number components by first encounter.
  DetectionSet set;
  set.height = h;
  set.width = w;
  std::vector<int> final_id(forest.parent.size(), -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = label[static_cast<std::size_t>(y) * w + x];
      if (l < 0) continue;
      const int root = forest.find(l);
      int& id = final_id[static_cast<std::size_t>(root)];
      if (id < 0) {
        id = static_cast<int>(set.components.size());
        set.components.push_back(Component{id, {}, 0.0, 0.0});
      }
      set.components[static_cast<std::size_t>(id)].pixels.push_back({y, x});
    }
  }
  for (auto& c : set.components) {
    double sr = 0.0, sc = 0.0;
    for (const auto& p : c.pixels) {
      sr += p.row;
      sc += p.col;
    }
    c.centroid_row = sr / c.area();
    c.centroid_col = sc / c.area();
  }
  return set;
}

std::vector<std::pair<double, double>> centroids(const DetectionSet& set) {
  std::vector<std::pair<double, double>> out;
  out.reserve(set.components.size());
  for (const auto& c : set.components) out.emplace_back(c.centroid_row, c.centroid_col);
  return out;
}

std::string detections_to_json(const DetectionSet& set) {
  nlohmann::json j;
  j["height"] = set.height;
  j["width"] = set.width;
  j["components"] = nlohmann::json::array();
  for (const auto& c : set.components) {
    const auto b = c.bbox();
    j["components"].push_back({{"id", c.id},
                               {"area", c.area()},
                               {"centroid", {c.centroid_row, c.centroid_col}},
                               {"bbox", {b[0], b[1], b[2], b[3]}}});
  }
  return j.dump(2);
}

std::vector<DetectionSummary> detections_from_json(const std::string& text) {
  std::vector<DetectionSummary> out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& c : j.at("components")) {
      DetectionSummary d{};
      d.id = c.at("id").get<int>();
      d.area = c.at("area").get<int>();
      d.centroid_row = c.at("centroid").at(0).get<double>();
      d.centroid_col = c.at("centroid").at(1).get<double>();
      for (int k = 0; k < 4; ++k) d.bbox[static_cast<std::size_t>(k)] = c.at("bbox").at(static_cast<std::size_t>(k)).get<int>();
      out.push_back(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("malformed detection JSON: ") + e.what());
  }
  return out;
}

}  // namespace sirst
