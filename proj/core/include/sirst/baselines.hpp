#pragma once

#include <string>
#include <vector>

#include "sirst/image.hpp"

namespace sirst {

struct FilterConfig {
  int tophat_structure = 5;  // square structuring element side
  int maxmedian_window = 5;  // odd directional-line length
  void validate() const;
};

/// Flat square min / max filters with reflect padding.
Image erode(const Image& img, int side);
Image dilate(const Image& img, int side);

/// White top-hat: image - dilate(erode(image)). Non-negative.
Image tophat(const Image& img, int structure);

/// Max of the medians along the horizontal, vertical and both diagonal
/// lines through each pixel; the response is max(image - filtered, 0).
Image maxmedian(const Image& img, int window);

/// Named detector producing a response map fed to the adaptive threshold.
std::vector<std::string> baseline_names();
bool is_baseline(const std::string& name);
Image run_baseline(const std::string& name, const Image& img, const FilterConfig& cfg = {});

}  // namespace sirst
