#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sirst/tensor.hpp"

namespace sirst {

class Rng;

/// Learnable tensor plus its Adagrad accumulator (elementwise >= 0).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor accumulator;
};

/// Ordered, name-unique collection of parameters.
class ParamStore {
 public:
  /// Adds a zero-initialized parameter; names must be unique.
  Parameter& add(const std::string& name, Shape shape);

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<std::string> names() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Xavier-uniform fill: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
void xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng);

}  // namespace sirst
