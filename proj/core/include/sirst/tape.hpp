#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sirst/tensor.hpp"

namespace sirst {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode computation tape.
///
/// Every op appends one node holding its forward value plus a closure that
/// pushes the node's gradient into its parents. Nodes are created in
/// dependency order, so backward() is a single reverse sweep. A tape can be
/// swept once; call reset() before recording the next forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Differentiable leaf (input or parameter).
  Var leaf(Tensor value);

  Var record(Tensor value, std::vector<int> parents, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target with respect to v; zeros when
  /// v was not reached.
  std::span<const double> grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss);
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  bool swept() const noexcept { return swept_; }

  // Used by op closures.
  std::span<const double> node_grad(int id) const;
  /// Gradient accumulator for a parent, allocated on first touch.
  std::span<double> accum(int id);
  const Tensor& node_value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackwardFn backward;
    Buffer grad;
    bool requires_grad = false;
  };

  void check(Var v) const;

  std::vector<Node> nodes_;
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes follow the (C, H, W) feature-map convention.

/// 2-D cross-correlation. weight is (O, C, K, K), bias is (O) or invalid.
Var conv2d(Tape& tape, Var input, Var weight, Var bias, int stride, int padding);
Var maxpool2(Tape& tape, Var input);
Var avgpool2(Tape& tape, Var input);
/// Bilinear x2 upsampling with half-pixel centers (no corner alignment).
Var upsample2(Tape& tape, Var input);
Var concat(Tape& tape, std::span<const Var> inputs);
Var relu(Tape& tape, Var input);
Var sigmoid(Tape& tape, Var input);
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var sum(Tape& tape, Var input);

/// (C,H,W) -> (C,1,1) global reductions.
Var global_max_pool(Tape& tape, Var input);
Var global_avg_pool(Tape& tape, Var input);
/// (C,H,W) -> (1,H,W) reductions across channels.
Var channel_max(Tape& tape, Var input);
Var channel_avg(Tape& tape, Var input);
/// L (C,H,W) times M (C,1,1), broadcast over space.
Var scale_channels(Tape& tape, Var features, Var attention);
/// L (C,H,W) times M (1,H,W), broadcast over channels.
Var scale_spatial(Tape& tape, Var features, Var attention);

/// weight (M, N) times x (N,1,1) -> (M,1,1).
Var matvec(Tape& tape, Var weight, Var x);
/// Hidden-layer MLP without biases: w2 * relu(w1 * x).
Var mlp_shared(Tape& tape, Var x, Var w1, Var w2);

inline constexpr double kNormEps = 1e-5;
/// Per-sample, per-channel normalisation over H x W followed by the affine
/// map gamma * xhat + beta; gamma and beta hold one entry per channel.
Var instance_norm(Tape& tape, Var input, Var gamma, Var beta);

inline constexpr double kSoftIouEps = 1e-6;
/// 1 - (sum(p*y) + eps) / (sum(p) + sum(y) - sum(p*y) + eps).
Var soft_iou_loss(Tape& tape, Var pred, Var mask);

}  // namespace sirst
