#include "sirst/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include <json.hpp>

#include "sirst/errors.hpp"

namespace sirst {

namespace {

constexpr std::array<char, 8> kMagic{'S', 'I', 'R', 'S', 'T', 'C', 'K', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string origin) : buf_(std::move(buf)), origin_(std::move(origin)) {}
  const char* take(std::size_t n) {
    if (n > buf_.size() - pos_) throw IoError(origin_ + ": truncated checkpoint");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(T)));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<T>(v);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const auto n = le<std::uint32_t>();
    const char* p = take(n);
    return std::string(p, n);
  }
  bool done() const { return pos_ == buf_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

std::string spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["depth"] = spec.depth;
  j["channels"] = spec.channels;
  j["mlp_reduction"] = spec.mlp_reduction;
  j["variant"] = to_string(spec.variant);
  j["attention"] = to_string(spec.attention);
  j["fpfm_layers"] = spec.fpfm_layers;
  j["residual"] = spec.residual;
  j["norm"] = to_string(spec.norm);
  j["seed"] = spec.seed;
  return j.dump();
}

NetworkSpec spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad network spec json: ") + e.what());
  }
  NetworkSpec s;
  try {
    s.depth = j.at("depth").get<int>();
    s.channels = j.at("channels").get<std::vector<int>>();
    s.mlp_reduction = j.at("mlp_reduction").get<int>();
    s.variant = parse_variant(j.at("variant").get<std::string>());
    s.attention = parse_attention(j.at("attention").get<std::string>());
    s.fpfm_layers = j.at("fpfm_layers").get<std::vector<int>>();
    s.residual = j.at("residual").get<bool>();
    s.norm = parse_norm(j.at("norm").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad network spec json: ") + e.what());
  }
  s.validate();
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const ParamStore& params,
                     std::uint64_t step) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.le(kCheckpointVersion);
  w.le(spec.seed);
  w.le(step);
  w.str(spec_to_json(spec));
  w.le(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.le(static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) w.le(static_cast<std::uint32_t>(d));
    const bool has_acc = p.accumulator.size() == p.value.size();
    w.le(static_cast<std::uint8_t>(has_acc ? 1 : 0));
    for (double v : p.value.data()) w.f64(v);
    if (has_acc)
      for (double v : p.accumulator.data()) w.f64(v);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), path.string());
  if (std::memcmp(r.take(kMagic.size()), kMagic.data(), kMagic.size()) != 0)
    throw IoError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto seed = r.le<std::uint64_t>();
  Checkpoint ck;
  ck.step = r.le<std::uint64_t>();
  ck.spec = spec_from_json(r.str());
  if (ck.spec.seed != seed) throw IoError(path.string() + ": seed header disagrees with spec");

  const ParamStore layout = build(ck.spec);
  const auto count = r.le<std::uint32_t>();
  if (count != layout.size())
    throw IoError(path.string() + ": expected " + std::to_string(layout.size()) + " parameters, found " +
                  std::to_string(count));
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw IoError(path.string() + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.le<std::uint32_t>());
    const auto& expected = layout[k];
    if (name != expected.name || shape != expected.value.shape())
      throw IoError(path.string() + ": parameter " + std::to_string(k) + " is " + name + shape_str(shape) +
                    ", expected " + expected.name + shape_str(expected.value.shape()));
    const auto flags = r.le<std::uint8_t>();
    auto& p = ck.params.add(name, shape);
    for (double& v : p.value.data()) v = r.f64();
    if (flags & 1)
      for (double& v : p.accumulator.data()) v = r.f64();
  }
  if (!r.done()) throw IoError(path.string() + ": trailing bytes after parameters");
  return ck;
}

}  // namespace sirst
