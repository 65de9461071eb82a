#include "sirst/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "sirst/errors.hpp"

namespace sirst {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::PointGaussian: return "point_gaussian";
    case TargetKind::Spot: return "spot";
    case TargetKind::Extended: return "extended";
  }
  return "?";
}

TargetKind parse_target_kind(const std::string& s) {
  for (TargetKind k : {TargetKind::PointGaussian, TargetKind::Spot, TargetKind::Extended})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown target kind '" + s + "'");
}

TargetKind kind_of_shape(const std::string& shape) {
  if (shape == "point") return TargetKind::PointGaussian;
  if (shape == "spot") return TargetKind::Spot;
  if (shape == "plane" || shape == "ship" || shape == "uav") return TargetKind::Extended;
  throw ConfigError("unknown target shape '" + shape + "' (point, spot, plane, ship, uav)");
}

// ---------------------------------------------------------------------------
// Configuration

void SynthConfig::validate() const {
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (scr_values.empty()) throw ConfigError("scr_values must not be empty");
  for (double c : scr_values)
    if (!(c > 0.0)) throw ConfigError("SCR values must be positive");
  if (blur_sigmas.empty()) throw ConfigError("blur_sigmas must not be empty");
  for (double s : blur_sigmas)
    if (!(s > 0.0)) throw ConfigError("blur sigmas must be positive");
  if (size_table.empty()) throw ConfigError("size table must list at least one scene");
  for (const auto& [scene, rows] : size_table) {
    double total = 0.0;
    for (const auto& r : rows) {
      kind_of_shape(r.shape);
      if (r.prob < 0.0) throw ConfigError("negative probability in scene '" + scene + "'");
      if (r.min_size < 1 || r.max_size < r.min_size)
        throw ConfigError("bad size range for '" + r.shape + "' in scene '" + scene + "'");
      total += r.prob;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw ConfigError("probabilities for scene '" + scene + "' sum to " + std::to_string(total));
  }
  double total = 0.0;
  for (const auto& [count, p] : count_probs) {
    if (count < 0 || p < 0.0) throw ConfigError("bad target-count distribution");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("target-count probabilities sum to " + std::to_string(total));
  if (ring_width < 1) throw ConfigError("ring_width must be >= 1");
  if (max_retries < 1) throw ConfigError("max_retries must be >= 1");
  if (test_fraction < 0.0 || test_fraction > 1.0) throw ConfigError("test_fraction must lie in [0, 1]");
}

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  // Scene-specific target mixes; implausible pairings get probability zero
  // (no ships over sky or cloud, no planes over city).
  c.size_table["sky"] = {{"point", 1, 5, 0.45}, {"spot", 3, 7, 0.35}, {"plane", 7, 19, 0.12}, {"uav", 7, 13, 0.08}};
  c.size_table["cloud"] = {{"point", 1, 5, 0.45}, {"spot", 3, 7, 0.35}, {"plane", 7, 19, 0.12}, {"uav", 7, 13, 0.08}};
  c.size_table["city"] = {{"point", 1, 5, 0.50}, {"spot", 3, 7, 0.40}, {"uav", 7, 11, 0.10}};
  c.size_table["sea"] = {{"point", 1, 5, 0.40}, {"spot", 3, 7, 0.35}, {"ship", 9, 17, 0.25}};
  c.size_table["field"] = {{"point", 1, 5, 0.45}, {"spot", 3, 7, 0.40}, {"uav", 7, 13, 0.15}};
  return c;
}

SynthConfig SynthConfig::toy() {
  SynthConfig c = defaults();
  c.image_size = 64;
  c.scr_values = {3.0, 5.0};
  c.ring_width = 6;
  for (auto& [scene, rows] : c.size_table) rows = {{"point", 3, 5, 0.5}, {"spot", 3, 5, 0.5}};
  c.count_probs = {{1, 0.6}, {2, 0.3}, {3, 0.1}};
  c.test_fraction = 0.2;
  return c;
}

void SynthConfig::restrict_shapes(const std::vector<std::string>& shapes) {
  for (const auto& s : shapes) kind_of_shape(s);
  for (auto it = size_table.begin(); it != size_table.end();) {
    auto& rows = it->second;
    std::erase_if(rows, [&](const SizeEntry& r) { return std::find(shapes.begin(), shapes.end(), r.shape) == shapes.end(); });
    double total = 0.0;
    for (const auto& r : rows) total += r.prob;
    if (rows.empty() || total <= 0.0) {
      it = size_table.erase(it);
      continue;
    }
    for (auto& r : rows) r.prob /= total;
    ++it;
  }
  if (size_table.empty()) throw ConfigError("shape restriction removed every scene");
}

// ---------------------------------------------------------------------------
// Templates

TargetTemplate make_point_target(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ConfigError("point target size must be odd, got " + std::to_string(size));
  if (!(sigma > 0.0)) throw ConfigError("point target sigma must be positive");
  TargetTemplate t{TargetKind::PointGaussian, "point", Image(size, size), BinaryMask(size, size)};
  const double c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * sigma * sigma));
      t.patch.at(y, x) = v;
      t.support.set(y, x, v > 0.05);
    }
  return t;
}

TargetTemplate make_spot_target(int size, Rng& rng) {
  if (size < 3 || size % 2 == 0) throw ConfigError("spot target size must be odd and >= 3");
  TargetTemplate t{TargetKind::Spot, "spot", Image(size, size), BinaryMask(size, size)};
  const double c = (size - 1) / 2.0;
  const double ry = rng.uniform(0.35, 0.5) * size;
  const double rx = rng.uniform(0.35, 0.5) * size;
  const double th = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(th), st = std::sin(th);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x - c) * ct + (y - c) * st;
      const double v = -(x - c) * st + (y - c) * ct;
      const double d2 = (u / rx) * (u / rx) + (v / ry) * (v / ry);
      if (d2 <= 1.0) {
        t.support.set(y, x);
        t.patch.at(y, x) = 1.0 - 0.6 * d2;
      }
    }
  return t;
}

namespace {

BinaryMask transpose(const BinaryMask& m) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out.set(x, y, m.get(y, x));
  return out;
}

BinaryMask mirror(const BinaryMask& m) {
  BinaryMask out(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out.set(y, x, m.get(y, m.width() - 1 - x));
  return out;
}

}  // namespace

TargetTemplate make_extended_target(const std::string& shape, int size, Rng& rng) {
  if (size < 5 || size % 2 == 0) throw ConfigError("extended target size must be odd and >= 5");
  BinaryMask m(size, size);
  const int c = size / 2;
  const int half = size >= 11 ? 1 : 0;  // half-thickness of strokes
  if (shape == "plane") {
    const int wing = static_cast<int>(std::lround(0.4 * (size - 1)));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const bool body = std::abs(x - c) <= half;
        const bool wings = std::abs(y - wing) <= half;
        const bool tail = y >= size - 1 - half && std::abs(x - c) <= c / 2;
        m.set(y, x, body || wings || tail);
      }
  } else if (shape == "ship") {
    const double a = size / 2.0;
    const double b = std::max(1.5, size / 6.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double u = (x - c) / a, v = (y - c) / b;
        m.set(y, x, u * u + v * v <= 1.0);
      }
  } else if (shape == "uav") {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int u = x - c, v = y - c;
        const bool arm = std::abs(u - v) <= half || std::abs(u + v) <= half;
        const bool hub = std::abs(u) <= 1 && std::abs(v) <= 1;
        m.set(y, x, (arm && u * u + v * v <= c * c) || hub);
      }
  } else {
    throw ConfigError("unknown extended template '" + shape + "'");
  }
  // Random pose: transpose and mirror give the eight axis-aligned orientations.
  if (rng.bernoulli(0.5)) m = transpose(m);
  if (rng.bernoulli(0.5)) m = mirror(m);
  if (rng.bernoulli(0.5)) m = transpose(mirror(transpose(m)));

  TargetTemplate t{TargetKind::Extended, shape, Image(size, size), m};
  const double s2 = (size / 3.0) * (size / 3.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (m.get(y, x)) t.patch.at(y, x) = 0.75 + 0.25 * std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * s2));
  return t;
}

TargetTemplate make_target(const std::string& shape, int size, Rng& rng) {
  switch (kind_of_shape(shape)) {
    case TargetKind::PointGaussian: return make_point_target(size, std::max(0.5, size / 3.0) * rng.uniform(0.8, 1.2));
    case TargetKind::Spot: return make_spot_target(std::max(3, size), rng);
    case TargetKind::Extended: return make_extended_target(shape, std::max(5, size), rng);
  }
  throw ConfigError("unreachable target kind");
}

// ---------------------------------------------------------------------------
// Selection and placement

namespace {

using Box = std::array<int, 4>;  // inclusive row0, col0, row1, col1

Box box_of(const TargetTemplate& t, Placement p) {
  return {p.row, p.col, p.row + t.patch.height() - 1, p.col + t.patch.width() - 1};
}

// Boxes are compatible when their Chebyshev gap exceeds the ring width.
bool separated(const Box& a, const Box& b, int gap) {
  return a[2] + gap < b[0] || b[2] + gap < a[0] || a[3] + gap < b[1] || b[3] + gap < a[1];
}

template <typename Weights>
std::size_t draw_index(const Weights& weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

int odd_size_in(int lo, int hi, Rng& rng) {
  std::vector<int> sizes;
  for (int s = lo; s <= hi; ++s)
    if (s % 2 == 1) sizes.push_back(s);
  if (sizes.empty()) return lo | 1;
  return sizes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(sizes.size()) - 1))];
}

bool try_place(const TargetTemplate& t, const std::vector<Box>& others, const SynthConfig& cfg, Rng& rng, int height,
               int width, Placement& out) {
  const int ph = t.patch.height(), pw = t.patch.width();
  if (ph > height || pw > width) return false;
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Placement p{rng.uniform_int(0, height - ph), rng.uniform_int(0, width - pw)};
    const Box b = box_of(t, p);
    bool ok = true;
    for (const auto& o : others) ok = ok && separated(b, o, cfg.ring_width);
    if (ok) {
      out = p;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<PlacedTarget> select_targets(const std::string& scene, const SynthConfig& cfg, Rng& rng, int height,
                                         int width) {
  auto it = cfg.size_table.find(scene);
  if (it == cfg.size_table.end()) throw ConfigError("scene '" + scene + "' has no entry in the size table");
  const auto& rows = it->second;

  std::vector<int> counts;
  std::vector<double> count_w;
  for (const auto& [n, p] : cfg.count_probs) {
    counts.push_back(n);
    count_w.push_back(p);
  }
  const int n = counts[draw_index(count_w, rng)];

  std::vector<double> row_w;
  for (const auto& r : rows) row_w.push_back(r.prob);

  std::vector<PlacedTarget> out;
  std::vector<Box> boxes;
  for (int k = 0; k < n; ++k) {
    const SizeEntry& row = rows[draw_index(row_w, rng)];
    PlacedTarget pt;
    pt.target = make_target(row.shape, odd_size_in(row.min_size, row.max_size, rng), rng);
    pt.scr = cfg.scr_values[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cfg.scr_values.size()) - 1))];
    if (!try_place(pt.target, boxes, cfg, rng, height, width, pt.at))
      throw GenerationError("could not place target " + std::to_string(k) + " (" + row.shape + ") after " +
                            std::to_string(cfg.max_retries) + " attempts");
    boxes.push_back(box_of(pt.target, pt.at));
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Intensity, blur, SCR

BackgroundStats background_stats(const Image& img, const BinaryMask& region) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (region[i]) {
      s += img[i];
      ++n;
    }
  if (n == 0) throw InvalidInputError("background region is empty");
  BackgroundStats st;
  st.mean = s / static_cast<double>(n);
  double v = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (region[i]) v += (img[i] - st.mean) * (img[i] - st.mean);
  st.stddev = std::sqrt(v / static_cast<double>(n));
  // Rounding leaves ~1e-16 on flat regions.
  if (st.stddev <= 1e-12 * std::max(1.0, std::abs(st.mean))) {
    st.stddev = kSigmaFloor;
    st.floored = true;
  }
  return st;
}

Image adjust_intensity(const TargetTemplate& target, const BackgroundStats& bg, double scr) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < target.patch.size(); ++i)
    if (target.support[i]) {
      s += target.patch[i];
      ++n;
    }
  if (n == 0 || s <= 0.0) throw InvalidInputError("target template has an empty or dark support");
  const double patch_mean = s / static_cast<double>(n);
  const double lift = scr * bg.stddev;
  Image out(target.patch.height(), target.patch.width());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (target.support[i]) out[i] = std::clamp(bg.mean + lift * target.patch[i] / patch_mean, 0.0, 1.0);
  return out;
}

Image blur(const Image& img, double sigma) { return gaussian_blur5(img, sigma); }

double scr_of(const Image& composite, const BinaryMask& target, const BinaryMask& background) {
  if (composite.height() != target.height() || composite.width() != target.width() ||
      composite.height() != background.height() || composite.width() != background.width())
    throw InvalidInputError("scr_of: region extents differ from the image");
  double ts = 0.0;
  std::size_t tn = 0;
  for (std::size_t i = 0; i < composite.size(); ++i) {
    if (target[i] && background[i]) throw InvalidInputError("scr_of: target and background regions overlap");
    if (target[i]) {
      ts += composite[i];
      ++tn;
    }
  }
  if (tn == 0) throw InvalidInputError("scr_of: target region is empty");
  const auto bg = background_stats(composite, background);
  return std::abs(ts / static_cast<double>(tn) - bg.mean) / bg.stddev;
}

BinaryMask ring_region(int height, int width, const std::array<int, 4>& box, int ring_width) {
  BinaryMask m(height, width);
  const int r0 = std::max(0, box[0] - ring_width), r1 = std::min(height - 1, box[2] + ring_width);
  const int c0 = std::max(0, box[1] - ring_width), c1 = std::min(width - 1, box[3] + ring_width);
  for (int y = r0; y <= r1; ++y)
    for (int x = c0; x <= c1; ++x) {
      const bool inside = y >= box[0] && y <= box[2] && x >= box[1] && x <= box[3];
      m.set(y, x, !inside);
    }
  return m;
}

// ---------------------------------------------------------------------------
// Backgrounds

namespace {

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

Image value_noise(int h, int w, int cells, Rng& rng) {
  const int g = cells + 2;
  std::vector<double> grid(static_cast<std::size_t>(g) * g);
  for (double& v : grid) v = rng.uniform();
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) * cells / h;
    const int iy = static_cast<int>(fy);
    const double ty = smoothstep(0.0, 1.0, fy - iy);
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) * cells / w;
      const int ix = static_cast<int>(fx);
      const double tx = smoothstep(0.0, 1.0, fx - ix);
      auto at = [&](int a, int b) { return grid[static_cast<std::size_t>(a) * g + b]; };
      const double top = (1 - tx) * at(iy, ix) + tx * at(iy, ix + 1);
      const double bot = (1 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1);
      out.at(y, x) = (1 - ty) * top + ty * bot;
    }
  }
  return out;
}

// Fractal sum of value-noise octaves, normalised to [0, 1].
Image fbm(int h, int w, int cells, int octaves, Rng& rng) {
  Image out(h, w);
  double amp = 1.0, total = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const Image n = value_noise(h, w, cells, rng);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += amp * n[i];
    total += amp;
    amp *= 0.5;
    cells *= 2;
  }
  for (double& v : out.pixels()) v /= total;
  return out;
}

}  // namespace

std::vector<std::string> procedural_scenes() { return {"city", "cloud", "field", "sea", "sky"}; }

Image make_background(const std::string& scene, int height, int width, Rng& rng) {
  Image img(height, width);
  if (scene == "sky") {
    const double top = rng.uniform(0.15, 0.3), bottom = top + rng.uniform(0.05, 0.2);
    const Image n = fbm(height, width, 4, 4, rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        img.at(y, x) = top + (bottom - top) * y / std::max(1, height - 1) + 0.05 * (n.at(y, x) - 0.5);
  } else if (scene == "cloud") {
    const double base = rng.uniform(0.15, 0.3);
    const Image cover = fbm(height, width, 3, 5, rng);
    const Image grain = fbm(height, width, 16, 2, rng);
    for (std::size_t i = 0; i < img.size(); ++i)
      img[i] = base + 0.3 * smoothstep(0.45, 0.75, cover[i]) + 0.03 * (grain[i] - 0.5);
  } else if (scene == "city") {
    const Image grain = fbm(height, width, std::max(4, width / 8), 2, rng);
    int y = 0;
    while (y < height) {
      const int bh = rng.uniform_int(8, 32);
      int x = 0;
      while (x < width) {
        const int bw = rng.uniform_int(8, 32);
        const double level = rng.uniform(0.2, 0.45);
        for (int yy = y; yy < std::min(height, y + bh); ++yy)
          for (int xx = x; xx < std::min(width, x + bw); ++xx) img.at(yy, xx) = level;
        x += bw;
      }
      y += bh;
    }
    for (std::size_t i = 0; i < img.size(); ++i) img[i] += 0.04 * (grain[i] - 0.5);
    img = gaussian_blur5(img, 1.0);
  } else if (scene == "sea") {
    const double base = rng.uniform(0.12, 0.25);
    const double period = rng.uniform(6.0, 14.0), phase = rng.uniform(0.0, 2 * std::numbers::pi);
    const Image n = fbm(height, width, 8, 3, rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        img.at(y, x) = base + 0.02 * std::sin(2 * std::numbers::pi * y / period + phase + 0.8 * std::sin(x / 9.0)) +
                       0.05 * (n.at(y, x) - 0.5);
  } else if (scene == "field") {
    const double base = rng.uniform(0.2, 0.35);
    const Image coarse = fbm(height, width, 3, 3, rng);
    const Image fine = fbm(height, width, std::max(4, width / 8), 2, rng);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = base + 0.15 * (coarse[i] - 0.5) + 0.05 * (fine[i] - 0.5);
  } else {
    throw ConfigError("no procedural generator for scene '" + scene + "'");
  }
  for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

std::vector<Background> procedural_backgrounds(int per_scene, int size, std::uint64_t seed) {
  std::vector<Background> out;
  const auto scenes = procedural_scenes();
  for (std::size_t s = 0; s < scenes.size(); ++s)
    for (int k = 0; k < per_scene; ++k) {
      Rng rng = Rng::substream(seed, 7000 + s, static_cast<std::uint64_t>(k));
      out.push_back({scenes[s], make_background(scenes[s], size, size, rng)});
    }
  return out;
}

std::vector<Background> load_backgrounds(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("background directory '" + root.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& scene_dir : fs::directory_iterator(root)) {
    if (!scene_dir.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(scene_dir.path()))
      if (f.path().extension() == ".png") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Background> out;
  for (const auto& f : files) out.push_back({f.parent_path().filename().string(), read_png(f)});
  if (out.empty()) throw IoError("no PNG backgrounds under '" + root.string() + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Samples

SampleRecord generate_sample(int index, const std::vector<Background>& backgrounds, const SynthConfig& cfg) {
  if (backgrounds.empty()) throw InvalidInputError("background list is empty");
  Rng rng = Rng::substream(cfg.seed, 1, static_cast<std::uint64_t>(index));
  const int size = cfg.image_size;

  const int bgi = rng.uniform_int(0, static_cast<int>(backgrounds.size()) - 1);
  const Background& bg = backgrounds[static_cast<std::size_t>(bgi)];
  Image base = bg.image;
  if (base.height() < size || base.width() < size) {
    base = resize_bilinear(base, size, size);
  } else {
    base = crop(base, rng.uniform_int(0, base.height() - size), rng.uniform_int(0, base.width() - size), size, size);
  }
  if (rng.bernoulli(0.5)) base = flip_horizontal(base);
  if (rng.bernoulli(0.5)) base = flip_vertical(base);

  auto targets = select_targets(bg.scene, cfg, rng, size, size);
  const double sigma = cfg.blur_sigmas[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cfg.blur_sigmas.size()) - 1))];

  SampleRecord rec;
  rec.composite = base;
  rec.mask = BinaryMask(size, size);
  rec.meta.index = index;
  rec.meta.scene = bg.scene;
  rec.meta.background = bgi;
  rec.meta.blur_sigma = sigma;

  std::vector<Box> boxes;
  for (const auto& t : targets) boxes.push_back(box_of(t.target, t.at));

  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto& t = targets[k];
    std::vector<Box> others;
    for (std::size_t o = 0; o < boxes.size(); ++o)
      if (o != k) others.push_back(boxes[o]);
    bool accepted = false;
    for (int attempt = 0; attempt < 20 && !accepted; ++attempt) {
      if (attempt > 0 && !try_place(t.target, others, cfg, rng, size, size, t.at)) break;
      const Box box = box_of(t.target, t.at);
      const BinaryMask ring = ring_region(size, size, box, cfg.ring_width);
      const BackgroundStats st = background_stats(base, ring);
      const Image values = adjust_intensity(t.target, st, t.scr);

      BinaryMask support(size, size);
      Image trial = rec.composite;
      bool clipped = false;
      for (int y = 0; y < t.target.patch.height(); ++y)
        for (int x = 0; x < t.target.patch.width(); ++x) {
          if (!t.target.support.get(y, x)) continue;
          const double v = values.at(y, x);
          if (v == 0.0 || v == 1.0) clipped = true;
          trial.at(box[0] + y, box[1] + x) = v;
          support.set(box[0] + y, box[1] + x);
        }
      const double measured = scr_of(trial, support, ring);
      if (std::abs(measured - t.scr) > cfg.scr_tolerance * t.scr) continue;

      accepted = true;
      boxes[k] = box;
      rec.composite = std::move(trial);
      TargetMeta m;
      m.kind = to_string(t.target.kind);
      m.shape = t.target.shape;
      double sr = 0.0, sc = 0.0;
      int area = 0;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (support.get(y, x)) {
            rec.mask.set(y, x);
            sr += y;
            sc += x;
            ++area;
          }
      m.centroid_row = sr / area;
      m.centroid_col = sc / area;
      m.area = area;
      m.bbox = box;
      m.scr_requested = t.scr;
      m.scr_measured = measured;
      m.blur_sigma = sigma;
      m.sigma_floored = st.floored;
      m.clipped = clipped;
      rec.meta.targets.push_back(m);
    }
    if (!accepted) {
      ++rec.meta.rejected_targets;
      boxes[k] = {-1000000, -1000000, -1000000, -1000000};
    }
  }
  rec.image = blur(rec.composite, sigma);
  return rec;
}

DatasetSplit split_indices(int n, double test_fraction) {
  DatasetSplit s;
  const int n_test = static_cast<int>(std::lround(n * test_fraction));
  for (int i = 0; i < n; ++i) (i < n - n_test ? s.train : s.test).push_back(i);
  return s;
}

std::string sample_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return buf;
}

std::string sample_meta_to_json(const SampleMeta& meta) {
  json j;
  j["index"] = meta.index;
  j["scene"] = meta.scene;
  j["background"] = meta.background;
  j["blur_sigma"] = meta.blur_sigma;
  j["rejected_targets"] = meta.rejected_targets;
  j["targets"] = json::array();
  for (const auto& t : meta.targets)
    j["targets"].push_back({{"kind", t.kind},
                            {"shape", t.shape},
                            {"centroid", {t.centroid_row, t.centroid_col}},
                            {"scr_requested", t.scr_requested},
                            {"scr_measured", t.scr_measured},
                            {"blur_sigma", t.blur_sigma},
                            {"bbox", {t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3]}},
                            {"area", t.area},
                            {"sigma_floored", t.sigma_floored},
                            {"clipped", t.clipped}});
  return j.dump(2);
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  json j;
  j["image_size"] = cfg.image_size;
  j["scr_values"] = cfg.scr_values;
  j["blur_sigmas"] = cfg.blur_sigmas;
  j["ring_width"] = cfg.ring_width;
  j["max_retries"] = cfg.max_retries;
  j["scr_tolerance"] = cfg.scr_tolerance;
  j["test_fraction"] = cfg.test_fraction;
  j["seed"] = cfg.seed;
  json counts = json::object();
  for (const auto& [n, p] : cfg.count_probs) counts[std::to_string(n)] = p;
  j["count_probs"] = counts;
  json table = json::object();
  for (const auto& [scene, rows] : cfg.size_table) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back({{"shape", r.shape}, {"min_size", r.min_size}, {"max_size", r.max_size}, {"prob", r.prob}});
    table[scene] = arr;
  }
  j["size_table"] = table;
  return j.dump(2);
}

bool within_spie_bound(int area, int image_area) {
  return static_cast<double>(area) < 0.0015 * static_cast<double>(image_area);
}

void StatsBuilder::add(const SampleRecord& sample) {
  ++s_.images;
  const int n = static_cast<int>(sample.meta.targets.size());
  ++s_.count_histogram[n];
  if (n >= 2) ++multi_;
  s_.rejected_targets += sample.meta.rejected_targets;

  std::vector<double> sorted = sample.image.pixels();
  const std::size_t k = static_cast<std::size_t>(0.9 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double p90 = sorted[k];

  for (const auto& t : sample.meta.targets) {
    ++s_.targets;
    ++s_.kind_counts[t.shape];
    std::ostringstream c;
    c << t.scr_requested;
    ++s_.scr_counts[c.str()];
    const double frac = 100.0 * t.area / image_area_;
    const char* bin = frac <= 0.01 ? "<=0.01%" : frac <= 0.05 ? "0.01-0.05%" : frac <= 0.10 ? "0.05-0.10%"
                    : frac < 0.15 ? "0.10-0.15%" : ">=0.15%";
    ++s_.area_histogram[bin];
    if (within_spie_bound(t.area, image_area_)) ++spie_;
    double peak = 0.0;
    for (int y = t.bbox[0]; y <= t.bbox[2]; ++y)
      for (int x = t.bbox[1]; x <= t.bbox[3]; ++x)
        if (sample.mask.get(y, x)) peak = std::max(peak, sample.image.at(y, x));
    if (peak < p90) ++dim_;
  }
}

DatasetStats StatsBuilder::finish() const {
  DatasetStats s = s_;
  s.multi_target_fraction = s.images ? static_cast<double>(multi_) / s.images : 0.0;
  s.spie_fraction = s.targets ? static_cast<double>(spie_) / s.targets : 1.0;
  s.dim_fraction = s.targets ? static_cast<double>(dim_) / s.targets : 0.0;
  return s;
}

std::string stats_to_json(const DatasetStats& s) {
  json j;
  j["images"] = s.images;
  j["targets"] = s.targets;
  json counts = json::object();
  for (const auto& [n, c] : s.count_histogram) counts[std::to_string(n)] = c;
  j["target_count_histogram"] = counts;
  j["multi_target_fraction"] = s.multi_target_fraction;
  j["area_histogram"] = s.area_histogram;
  j["spie_fraction"] = s.spie_fraction;
  j["dim_fraction"] = s.dim_fraction;
  j["kind_counts"] = s.kind_counts;
  j["scr_counts"] = s.scr_counts;
  j["rejected_targets"] = s.rejected_targets;
  return j.dump(2);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text << '\n';
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

DatasetStats synth_dataset(int n, const std::vector<Background>& backgrounds, const SynthConfig& cfg,
                           const fs::path& root, bool force, const std::string& config_echo) {
  cfg.validate();
  if (n < 0) throw ConfigError("sample count must be >= 0");
  if (backgrounds.empty()) throw InvalidInputError("background list is empty");
  std::error_code ec;
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw IoError("'" + root.string() + "' already exists; pass --force to overwrite");
    fs::remove_all(root, ec);
    if (ec) throw IoError("cannot clear '" + root.string() + "': " + ec.message());
  }
  for (const char* sub : {"images", "masks", "meta"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw IoError("cannot create '" + (root / sub).string() + "': " + ec.message());
  }

  StatsBuilder stats(cfg.image_size * cfg.image_size);
  for (int i = 0; i < n; ++i) {
    const SampleRecord rec = generate_sample(i, backgrounds, cfg);
    const std::string name = sample_name(i);
    write_png8(root / "images" / (name + ".png"), rec.image);
    std::vector<std::uint8_t> bytes(rec.mask.size());
    for (std::size_t k = 0; k < bytes.size(); ++k) bytes[k] = rec.mask[k] ? 255 : 0;
    write_png8_raw(root / "masks" / (name + ".png"), rec.mask.height(), rec.mask.width(), bytes);
    write_text(root / "meta" / (name + ".json"), sample_meta_to_json(rec.meta));
    stats.add(rec);
  }
  const DatasetStats result = stats.finish();

  const DatasetSplit split = split_indices(n, cfg.test_fraction);
  json manifest;
  manifest["format"] = "sirst-dataset";
  manifest["version"] = 1;
  manifest["count"] = n;
  manifest["seed"] = cfg.seed;
  manifest["image_size"] = cfg.image_size;
  manifest["backgrounds"] = backgrounds.size();
  manifest["synth_config"] = json::parse(synth_config_to_json(cfg));
  manifest["config"] = config_echo;
  manifest["splits"] = {{"train", split.train}, {"test", split.test}};
  write_text(root / "manifest.json", manifest.dump(2));
  write_text(root / "stats.json", stats_to_json(result));
  return result;
}

std::vector<DatasetSample> load_dataset(const fs::path& root, const std::string& split) {
  json manifest;
  try {
    manifest = json::parse(read_text(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in '" + root.string() + "': " + e.what());
  }
  std::vector<int> ids;
  if (split == "all") {
    const int n = manifest.at("count").get<int>();
    for (int i = 0; i < n; ++i) ids.push_back(i);
  } else if (manifest["splits"].contains(split)) {
    ids = manifest["splits"][split].get<std::vector<int>>();
  } else {
    throw ConfigError("dataset has no split named '" + split + "'");
  }
  std::vector<DatasetSample> out;
  out.reserve(ids.size());
  for (int i : ids) {
    const std::string name = sample_name(i);
    out.push_back({i, read_png(root / "images" / (name + ".png")),
                   BinaryMask::from_image(read_png(root / "masks" / (name + ".png")))});
  }
  return out;
}

}  // namespace sirst
