#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sirst/baselines.hpp"
#include "sirst/network.hpp"
#include "sirst/synth.hpp"
#include "sirst/trainer.hpp"

namespace sirst {

using KeyValues = std::map<std::string, std::string>;

/// Parses "key = value" lines. Blank lines and lines starting with '#' are
/// skipped; a later duplicate key wins.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);

/// Every recognised key with its default under the named preset
/// ("default" or "toy").
KeyValues preset_defaults(const std::string& preset);

/// Fully resolved run configuration: every key present, all values
/// validated. Typed views are derived from the key table on demand, so the
/// table itself is the single source of truth echoed into manifests.
class RunConfig {
 public:
  /// Preset defaults, overlaid by file entries, overlaid by overrides. The
  /// preset is taken from the overrides, then the file, then "default".
  static RunConfig resolve(const KeyValues& file, const KeyValues& overrides);

  const KeyValues& values() const noexcept { return kv_; }
  const std::string& get(const std::string& key) const;

  std::uint64_t seed() const;
  int synth_count() const;
  SynthConfig synth() const;
  std::vector<Background> backgrounds() const;
  NetworkSpec network() const;
  TrainConfig train() const;
  FilterConfig filters() const;
  std::string detector() const;
  double d_thresh() const;
  std::vector<double> d_thresh_sweep() const;
  double threshold() const;
  std::vector<double> roc_thresholds() const;

  /// Canonical key=value text; feeding it back through resolve() yields the
  /// same configuration.
  std::string to_text() const;

 private:
  explicit RunConfig(KeyValues kv) : kv_(std::move(kv)) {}
  void validate() const;
  KeyValues kv_;
};

std::vector<double> parse_double_list(const std::string& key, const std::string& value);
std::vector<int> parse_int_list(const std::string& key, const std::string& value);

}  // namespace sirst
