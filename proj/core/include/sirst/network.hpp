#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sirst/params.hpp"
#include "sirst/tape.hpp"

namespace sirst {

/// Skip-connection topology of the node grid.
enum class Variant {
  Full,         // dense + pooled-from-shallower + upsampled-from-deeper
  NoDnim,       // plain U-shape: encoder plus one decoder node per level
  LeftToRight,  // nested U stacked left to right: dense + upsampled only
  TopToBottom,  // tri-direction only in the grid core, elsewhere dense + upsampled
};

/// Post-fusion feature enhancement.
enum class Attention {
  Full,       // channel then spatial attention
  NoChannel,  // spatial only
  NoSpatial,  // channel only
  None,       // plain concatenation
  SumFusion,  // 1x1-projected element-wise summation instead of concatenation
};

/// Normalisation inside each conv block.
enum class Norm {
  None,      // conv - relu - conv - relu
  Instance,  // conv - norm - relu - conv - norm - relu, statistics per sample and channel
};

std::string to_string(Variant v);
std::string to_string(Attention a);
std::string to_string(Norm n);
Variant parse_variant(const std::string& s);
Attention parse_attention(const std::string& s);
Norm parse_norm(const std::string& s);

struct NetworkSpec {
  int depth = 4;  // number of down-sampling layers I
  std::vector<int> channels{16, 32, 64, 128, 256};
  int mlp_reduction = 4;
  Variant variant = Variant::Full;
  Attention attention = Attention::Full;
  std::vector<int> fpfm_layers{0, 1, 2, 3, 4};
  bool residual = true;  // identity shortcut in conv blocks with matching widths
  Norm norm = Norm::Instance;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  static NetworkSpec desk_default();
  /// I=2, channels [4,8,16]; used by gradient checks.
  static NetworkSpec tiny();
  /// I=3, channels [8,16,32,64].
  static NetworkSpec toy();
};

struct NodeId {
  int level = 0;   // i: down-sampling depth
  int column = 0;  // j: position along the skip pathway
  auto operator<=>(const NodeId&) const = default;
};

std::string node_name(NodeId id);

enum class InputKind { Image, Pooled, Dense, Upsampled };

/// One term of a node's fused input, in concatenation order.
struct NodeInput {
  InputKind kind;
  NodeId source;  // ignored for Image
  int channels;
  bool operator==(const NodeInput&) const = default;
};

bool has_node(const NetworkSpec& spec, NodeId id);
/// Nodes in a valid evaluation order (columns left to right, shallow first).
std::vector<NodeId> node_order(const NetworkSpec& spec);
/// L^{i,J}: the last node on level i.
NodeId terminal_node(const NetworkSpec& spec, int level);
/// Ordered input terms of a node: the encoder step for column 0, otherwise
/// dense same-level terms by ascending column, then the pooled term, then the
/// upsampled term.
std::vector<NodeInput> node_inputs(const NetworkSpec& spec, NodeId id);
int node_input_channels(const NetworkSpec& spec, NodeId id);
/// Attention is applied after fusion nodes (column > 0).
bool is_fusion_node(NodeId id);

/// Allocates and Xavier-initializes every parameter for spec.
ParamStore build(const NetworkSpec& spec);

/// Parameters recorded as differentiable leaves on one tape, indexed like
/// the ParamStore they came from.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamStore& params);
  Var operator()(const std::string& name) const;
  const std::vector<Var>& vars() const noexcept { return vars_; }

 private:
  const ParamStore* params_;
  std::vector<Var> vars_;
};

/// Computed node outputs L^{i,j}.
class NodeGrid {
 public:
  void set(NodeId id, Var v) { nodes_[id] = v; }
  /// Throws DependencyOrderError when the node was not computed yet.
  Var get(NodeId id) const;
  bool contains(NodeId id) const { return nodes_.contains(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::map<NodeId, Var>& nodes() const noexcept { return nodes_; }

 private:
  std::map<NodeId, Var> nodes_;
};

struct ForwardOptions {
  /// Replace every attention map with ones (argument-level identity check).
  bool unit_attention = false;
};

/// Structural record of a forward pass, for inspection and tests.
struct ForwardTrace {
  struct Node {
    NodeId id;
    Shape shape;
    std::vector<NodeInput> inputs;
    std::vector<Shape> input_shapes;
  };
  std::vector<Node> nodes;
  std::vector<Tensor> channel_maps;
  std::vector<Tensor> spatial_maps;
  int fpfm_channels = 0;
};

Var conv_block(Tape& tape, Var x, const ParamBinding& p, const std::string& prefix, const NetworkSpec& spec);

/// L' = sigmoid(MLP(globalmax L) + MLP(globalavg L)) * L.
Var csam_channel(Tape& tape, Var features, Var fc1, Var fc2, Tensor* map_out = nullptr);
/// L'' = sigmoid(conv7x7([channelmax L', channelavg L'])) * L'.
Var csam_spatial(Tape& tape, Var features, Var kernel, Tensor* map_out = nullptr);

/// Computes node (i, j) from already computed predecessors in grid.
Var dnim_node(Tape& tape, Var image, NodeId id, const NodeGrid& grid, const ParamBinding& p,
              const NetworkSpec& spec, const ForwardOptions& opts = {}, ForwardTrace* trace = nullptr);

/// Upsamples selected terminal nodes to full resolution, concatenates them
/// in depth order, then 1x1 conv + sigmoid.
Var fpfm(Tape& tape, const NodeGrid& grid, const ParamBinding& p, const NetworkSpec& spec,
         ForwardTrace* trace = nullptr);

struct NetworkOutput {
  Var prob;  // (1, H, W) in (0, 1)
  NodeGrid grid;
  ParamBinding params;
};

/// Records the full forward pass on tape. image must be (1, H, W) with H, W
/// divisible by 2^depth.
NetworkOutput forward(Tape& tape, const Tensor& image, const ParamStore& params, const NetworkSpec& spec,
                      const ForwardOptions& opts = {}, ForwardTrace* trace = nullptr);

/// Inference convenience: probability map for one image.
Tensor predict(const Tensor& image, const ParamStore& params, const NetworkSpec& spec);

/// Single-sample Soft-IoU loss and gradients; writes each Parameter's grad
/// slot. Returns the loss.
double loss_and_gradients(const Tensor& image, const Tensor& mask, ParamStore& params,
                          const NetworkSpec& spec);

/// Same as above, but into caller-owned buffers aligned with params.
double loss_and_gradients(const Tensor& image, const Tensor& mask, const ParamStore& params,
                          const NetworkSpec& spec, std::vector<std::vector<double>>& grads);

}  // namespace sirst
