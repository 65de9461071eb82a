#include "sirst/baselines.hpp"

#include <algorithm>
#include <array>

#include "sirst/errors.hpp"

namespace sirst {
namespace {

void require_odd(int side, const char* what) {
  if (side < 3 || side % 2 == 0)
    throw ConfigError(std::string(what) + " must be odd and >= 3, got " + std::to_string(side));
}

// Square min/max filters are separable: the 2-D reflected window is the
// product of two 1-D reflected windows.
template <typename Pick>
Image separable_filter(const Image& img, int side, Pick pick) {
  const int r = side / 2;
  Image rows(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double v = img.at(y, reflect_index(x - r, img.width()));
      for (int d = -r + 1; d <= r; ++d) v = pick(v, img.at(y, reflect_index(x + d, img.width())));
      rows.at(y, x) = v;
    }
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double v = rows.at(reflect_index(y - r, img.height()), x);
      for (int d = -r + 1; d <= r; ++d) v = pick(v, rows.at(reflect_index(y + d, img.height()), x));
      out.at(y, x) = v;
    }
  return out;
}

}  // namespace

void FilterConfig::validate() const {
  require_odd(tophat_structure, "tophat structure");
  require_odd(maxmedian_window, "max-median window");
}

Image erode(const Image& img, int side) {
  return separable_filter(img, side, [](double a, double b) { return std::min(a, b); });
}

Image dilate(const Image& img, int side) {
  return separable_filter(img, side, [](double a, double b) { return std::max(a, b); });
}

Image tophat(const Image& img, int structure) {
  require_odd(structure, "tophat structure");
  const Image opened = dilate(erode(img, structure), structure);
  Image out(img.height(), img.width());
  // Opening is anti-extensive, so the difference is >= 0; clamp guards rounding.
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::max(0.0, img[i] - opened[i]);
  return out;
}

Image maxmedian(const Image& img, int window) {
  require_odd(window, "max-median window");
  const int r = window / 2;
  constexpr std::array<std::array<int, 2>, 4> dirs{{{0, 1}, {1, 0}, {1, 1}, {1, -1}}};
  std::vector<double> line(static_cast<std::size_t>(window));
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double best = 0.0;
      for (std::size_t d = 0; d < dirs.size(); ++d) {
        for (int k = -r; k <= r; ++k)
          line[static_cast<std::size_t>(k + r)] =
              img.at(reflect_index(y + k * dirs[d][0], img.height()), reflect_index(x + k * dirs[d][1], img.width()));
        auto mid = line.begin() + r;
        std::nth_element(line.begin(), mid, line.end());
        best = d == 0 ? *mid : std::max(best, *mid);
      }
      out.at(y, x) = std::max(0.0, img.at(y, x) - best);
    }
  return out;
}

std::vector<std::string> baseline_names() { return {"tophat", "maxmedian"}; }

bool is_baseline(const std::string& name) {
  const auto names = baseline_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

Image run_baseline(const std::string& name, const Image& img, const FilterConfig& cfg) {
  if (name == "tophat") return tophat(img, cfg.tophat_structure);
  if (name == "maxmedian") return maxmedian(img, cfg.maxmedian_window);
  throw ConfigError("unknown detector '" + name + "'");
}

}  // namespace sirst
