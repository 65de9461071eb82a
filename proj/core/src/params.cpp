#include "sirst/params.hpp"

#include <cmath>

#include "sirst/errors.hpp"
#include "sirst/rng.hpp"

namespace sirst {

Parameter& ParamStore::add(const std::string& name, Shape shape) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  Tensor value(shape);
  Tensor acc(std::move(shape));
  params_.push_back(Parameter{name, std::move(value), std::move(acc)});
  return params_.back();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParamStore::at(const std::string& name) { return params_[index_of(name)]; }
const Parameter& ParamStore::at(const std::string& name) const { return params_[index_of(name)]; }

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

void xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace sirst
