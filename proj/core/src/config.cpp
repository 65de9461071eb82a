#include "sirst/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sirst/errors.hpp"

namespace sirst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) out << (i ? "," : "") << xs[i];
  return out.str();
}

}  // namespace

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& item : split_list(value)) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& item : split_list(value)) out.push_back(static_cast<int>(to_int(key, item)));
  return out;
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

KeyValues preset_defaults(const std::string& preset) {
  KeyValues kv{
      {"preset", "default"},
      {"seed", "0"},
      {"synth.n", "1000"},
      {"synth.image_size", "256"},
      {"synth.scr", "3,4,5,6"},
      {"synth.blur_sigmas", "0.2,0.5,1"},
      {"synth.count_probs", "0.63,0.25,0.12"},
      {"synth.ring_width", "10"},
      {"synth.max_retries", "200"},
      {"synth.scr_tolerance", "0.05"},
      {"synth.test_fraction", "0.5"},
      {"synth.shapes", "all"},
      {"synth.backgrounds", ""},
      {"synth.backgrounds_per_scene", "4"},
      {"net.depth", "4"},
      {"net.channels", "16,32,64,128,256"},
      {"net.mlp_reduction", "4"},
      {"net.variant", "full"},
      {"net.attention", "full"},
      {"net.fpfm_layers", "0,1,2,3,4"},
      {"net.residual", "true"},
      {"net.norm", "instance"},
      {"train.lr", "0.05"},
      {"train.batch", "16"},
      {"train.epochs", "10"},
      {"train.max_steps", "0"},
      {"train.flip", "true"},
      {"train.blur", "true"},
      {"train.crop", "true"},
      {"train.normalize", "true"},
      {"train.checkpoint_every", "0"},
      {"train.threads", "0"},
      {"eval.detector", "dnanet"},
      {"eval.threshold", "0.5"},
      {"eval.d_thresh", "3"},
      {"eval.d_thresh_sweep", "2,3,4"},
      {"eval.roc_thresholds", "0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.95"},
      {"filter.tophat_structure", "5"},
      {"filter.maxmedian_window", "5"},
      {"eval.split", "test"},
      {"paths.out", ""},
      {"paths.dataset", ""},
      {"paths.checkpoint", ""},
      {"paths.resume", ""},
      {"paths.images", ""},
      {"paths.pred_masks", ""},
      {"paths.inputs", ""},
  };
  if (preset == "default") return kv;
  if (preset != "toy") throw ConfigError("unknown preset '" + preset + "' (default, toy)");
  kv["preset"] = "toy";
  kv["synth.n"] = "250";
  kv["synth.image_size"] = "64";
  kv["synth.scr"] = "3,5";
  kv["synth.count_probs"] = "0.6,0.3,0.1";
  kv["synth.ring_width"] = "6";
  kv["synth.test_fraction"] = "0.2";
  kv["synth.shapes"] = "point,spot";
  kv["net.depth"] = "3";
  kv["net.channels"] = "8,16,32,64";
  kv["net.fpfm_layers"] = "0,1,2,3";
  kv["train.batch"] = "8";
  kv["train.epochs"] = "20";
  kv["train.max_steps"] = "500";
  return kv;
}

RunConfig RunConfig::resolve(const KeyValues& file, const KeyValues& overrides) {
  std::string preset = "default";
  if (auto it = file.find("preset"); it != file.end()) preset = it->second;
  if (auto it = overrides.find("preset"); it != overrides.end()) preset = it->second;
  KeyValues kv = preset_defaults(preset);
  for (const auto* layer : {&file, &overrides})
    for (const auto& [k, v] : *layer) {
      if (!kv.contains(k)) throw ConfigError("unknown config key '" + k + "'");
      kv[k] = v;
    }
  RunConfig rc(std::move(kv));
  rc.validate();
  return rc;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::validate() const {
  (void)seed();
  if (synth_count() < 0) throw ConfigError("synth.n must be >= 0");
  synth().validate();
  if (to_int("synth.backgrounds_per_scene", get("synth.backgrounds_per_scene")) < 1)
    throw ConfigError("synth.backgrounds_per_scene must be >= 1");
  network().validate();
  train().validate();
  filters().validate();
  const auto det = detector();
  if (det != "dnanet" && !is_baseline(det)) throw ConfigError("unknown detector '" + det + "'");
  const double t = threshold();
  if (!(t >= 0.0 && t < 1.0)) throw ConfigError("eval.threshold must lie in [0, 1)");
  if (!(d_thresh() > 0.0)) throw ConfigError("eval.d_thresh must be > 0");
  for (double d : d_thresh_sweep())
    if (!(d > 0.0)) throw ConfigError("eval.d_thresh_sweep entries must be > 0");
  if (roc_thresholds().empty()) throw ConfigError("eval.roc_thresholds is empty");
  const auto& split = get("eval.split");
  if (split != "train" && split != "test" && split != "all")
    throw ConfigError("eval.split must be train, test or all");
}

std::uint64_t RunConfig::seed() const {
  const auto s = to_int("seed", get("seed"));
  if (s < 0) throw ConfigError("seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

int RunConfig::synth_count() const { return static_cast<int>(to_int("synth.n", get("synth.n"))); }

SynthConfig RunConfig::synth() const {
  SynthConfig c = get("preset") == "toy" ? SynthConfig::toy() : SynthConfig::defaults();
  c.image_size = static_cast<int>(to_int("synth.image_size", get("synth.image_size")));
  c.scr_values = parse_double_list("synth.scr", get("synth.scr"));
  c.blur_sigmas = parse_double_list("synth.blur_sigmas", get("synth.blur_sigmas"));
  const auto probs = parse_double_list("synth.count_probs", get("synth.count_probs"));
  c.count_probs.clear();
  for (std::size_t i = 0; i < probs.size(); ++i) c.count_probs[static_cast<int>(i) + 1] = probs[i];
  c.ring_width = static_cast<int>(to_int("synth.ring_width", get("synth.ring_width")));
  c.max_retries = static_cast<int>(to_int("synth.max_retries", get("synth.max_retries")));
  c.scr_tolerance = to_double("synth.scr_tolerance", get("synth.scr_tolerance"));
  c.test_fraction = to_double("synth.test_fraction", get("synth.test_fraction"));
  if (const auto& shapes = get("synth.shapes"); shapes != "all") c.restrict_shapes(split_list(shapes));
  c.seed = seed();
  return c;
}

std::vector<Background> RunConfig::backgrounds() const {
  const SynthConfig cfg = synth();
  std::vector<Background> bgs;
  if (const auto& dir = get("synth.backgrounds"); !dir.empty()) {
    bgs = load_backgrounds(dir);
  } else {
    const auto per_scene =
        static_cast<int>(to_int("synth.backgrounds_per_scene", get("synth.backgrounds_per_scene")));
    // Drawn at twice the image size so crops vary.
    bgs = procedural_backgrounds(per_scene, 2 * cfg.image_size, seed());
  }
  // A shape restriction can leave some scenes without any target rows.
  std::erase_if(bgs, [&](const Background& b) { return !cfg.size_table.contains(b.scene); });
  if (bgs.empty()) throw ConfigError("no background scene has targets under the current shape restriction");
  return bgs;
}

NetworkSpec RunConfig::network() const {
  NetworkSpec s;
  s.depth = static_cast<int>(to_int("net.depth", get("net.depth")));
  s.channels = parse_int_list("net.channels", get("net.channels"));
  s.mlp_reduction = static_cast<int>(to_int("net.mlp_reduction", get("net.mlp_reduction")));
  s.variant = parse_variant(get("net.variant"));
  s.attention = parse_attention(get("net.attention"));
  s.fpfm_layers = parse_int_list("net.fpfm_layers", get("net.fpfm_layers"));
  s.residual = to_bool("net.residual", get("net.residual"));
  s.norm = parse_norm(get("net.norm"));
  s.seed = seed();
  return s;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.learning_rate = to_double("train.lr", get("train.lr"));
  t.batch_size = static_cast<int>(to_int("train.batch", get("train.batch")));
  t.epochs = static_cast<int>(to_int("train.epochs", get("train.epochs")));
  t.max_steps = static_cast<int>(to_int("train.max_steps", get("train.max_steps")));
  t.augmentation.flip = to_bool("train.flip", get("train.flip"));
  t.augmentation.blur = to_bool("train.blur", get("train.blur"));
  t.augmentation.crop = to_bool("train.crop", get("train.crop"));
  t.augmentation.normalize = to_bool("train.normalize", get("train.normalize"));
  t.checkpoint_every = static_cast<int>(to_int("train.checkpoint_every", get("train.checkpoint_every")));
  t.threads = static_cast<int>(to_int("train.threads", get("train.threads")));
  t.seed = seed();
  return t;
}

FilterConfig RunConfig::filters() const {
  FilterConfig f;
  f.tophat_structure = static_cast<int>(to_int("filter.tophat_structure", get("filter.tophat_structure")));
  f.maxmedian_window = static_cast<int>(to_int("filter.maxmedian_window", get("filter.maxmedian_window")));
  return f;
}

std::string RunConfig::detector() const { return get("eval.detector"); }
double RunConfig::d_thresh() const { return to_double("eval.d_thresh", get("eval.d_thresh")); }
std::vector<double> RunConfig::d_thresh_sweep() const {
  return parse_double_list("eval.d_thresh_sweep", get("eval.d_thresh_sweep"));
}
double RunConfig::threshold() const { return to_double("eval.threshold", get("eval.threshold")); }
std::vector<double> RunConfig::roc_thresholds() const {
  return parse_double_list("eval.roc_thresholds", get("eval.roc_thresholds"));
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace sirst
