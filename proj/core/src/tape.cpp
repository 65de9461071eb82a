#include "sirst/tape.hpp"

#include "sirst/errors.hpp"

namespace sirst {

Var Tape::constant(Tensor value) {
  if (swept_) throw StaleTapeError("recording on a swept tape; call reset() first");
  nodes_.push_back(Node{std::move(value), {}, nullptr, {}, false});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  if (swept_) throw StaleTapeError("recording on a swept tape; call reset() first");
  nodes_.push_back(Node{std::move(value), {}, nullptr, {}, true});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int> parents, BackwardFn backward) {
  if (swept_) throw StaleTapeError("recording on a swept tape; call reset() first");
  bool needs = false;
  for (int p : parents) {
    if (p < 0 || p >= static_cast<int>(nodes_.size()))
      throw DependencyOrderError("op references a value not on this tape");
    needs = needs || nodes_[static_cast<std::size_t>(p)].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(parents),
                        needs ? std::move(backward) : nullptr, {}, needs});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw DependencyOrderError("variable " + std::to_string(v.id) + " is not on this tape");
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
}

std::span<const double> Tape::grad(Var v) const {
  check(v);
  const auto& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.grad;
}

std::span<const double> Tape::node_grad(int id) const {
  return nodes_[static_cast<std::size_t>(id)].grad;
}

std::span<double> Tape::accum(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (swept_) throw StaleTapeError("backward already ran on this tape; record a new forward pass");
  if (nodes_[static_cast<std::size_t>(loss.id)].value.size() != 1)
    throw InvalidShapeError("backward target must be a scalar");
  swept_ = true;
  for (auto& n : nodes_) n.grad.clear();
  accum(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  // Unreached differentiable values report zero gradients.
  for (auto& n : nodes_)
    if (n.requires_grad && n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

void Tape::reset() {
  nodes_.clear();
  swept_ = false;
}

}  // namespace sirst
