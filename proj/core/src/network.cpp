#include "sirst/network.hpp"

#include <algorithm>
#include <utility>

#include "sirst/errors.hpp"
#include "sirst/rng.hpp"

namespace sirst {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoDnim: return "no_dnim";
    case Variant::LeftToRight: return "left_to_right";
    case Variant::TopToBottom: return "top_to_bottom";
  }
  return "?";
}

std::string to_string(Attention a) {
  switch (a) {
    case Attention::Full: return "full";
    case Attention::NoChannel: return "no_channel";
    case Attention::NoSpatial: return "no_spatial";
    case Attention::None: return "none";
    case Attention::SumFusion: return "sum_fusion";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Full, Variant::NoDnim, Variant::LeftToRight, Variant::TopToBottom})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (full, no_dnim, left_to_right, top_to_bottom)");
}

std::string to_string(Norm n) { return n == Norm::Instance ? "instance" : "none"; }

Norm parse_norm(const std::string& s) {
  if (s == "none") return Norm::None;
  if (s == "instance") return Norm::Instance;
  throw ConfigError("unknown norm '" + s + "' (none, instance)");
}

Attention parse_attention(const std::string& s) {
  for (Attention a : {Attention::Full, Attention::NoChannel, Attention::NoSpatial, Attention::None,
                      Attention::SumFusion})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown attention '" + s + "' (full, no_channel, no_spatial, none, sum_fusion)");
}

void NetworkSpec::validate() const {
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (channels.size() != static_cast<std::size_t>(depth) + 1)
    throw ConfigError("expected " + std::to_string(depth + 1) + " channel widths, got " +
                      std::to_string(channels.size()));
  if (mlp_reduction < 1) throw ConfigError("mlp_reduction must be >= 1");
  for (int c : channels) {
    if (c < 1) throw ConfigError("channel widths must be positive");
    if (c % mlp_reduction != 0)
      throw ConfigError("channel width " + std::to_string(c) + " not divisible by mlp_reduction " +
                        std::to_string(mlp_reduction));
  }
  if (fpfm_layers.empty()) throw ConfigError("fpfm_layers must not be empty");
  for (int l : fpfm_layers)
    if (l < 0 || l > depth) throw ConfigError("fpfm layer " + std::to_string(l) + " outside 0.." + std::to_string(depth));
  for (std::size_t k = 1; k < fpfm_layers.size(); ++k)
    if (fpfm_layers[k] <= fpfm_layers[k - 1]) throw ConfigError("fpfm_layers must be strictly ascending");
}

NetworkSpec NetworkSpec::desk_default() { return NetworkSpec{}; }

NetworkSpec NetworkSpec::tiny() {
  NetworkSpec s;
  s.depth = 2;
  s.channels = {4, 8, 16};
  s.mlp_reduction = 2;
  s.fpfm_layers = {0, 1, 2};
  return s;
}

NetworkSpec NetworkSpec::toy() {
  NetworkSpec s;
  s.depth = 3;
  s.channels = {8, 16, 32, 64};
  s.mlp_reduction = 4;
  s.fpfm_layers = {0, 1, 2, 3};
  return s;
}

std::string node_name(NodeId id) {
  return "node." + std::to_string(id.level) + "." + std::to_string(id.column);
}

bool has_node(const NetworkSpec& spec, NodeId id) {
  const int I = spec.depth;
  if (id.level < 0 || id.level > I || id.column < 0 || id.column > I - id.level) return false;
  if (spec.variant == Variant::NoDnim) return id.column == 0 || id.column == I - id.level;
  return true;
}

std::vector<NodeId> node_order(const NetworkSpec& spec) {
  std::vector<NodeId> order;
  for (int j = 0; j <= spec.depth; ++j)
    for (int i = 0; i <= spec.depth - j; ++i)
      if (has_node(spec, {i, j})) order.push_back({i, j});
  return order;
}

NodeId terminal_node(const NetworkSpec& spec, int level) {
  if (level < 0 || level > spec.depth) throw ConfigError("level outside grid");
  return {level, spec.depth - level};
}

bool is_fusion_node(NodeId id) { return id.column > 0; }

namespace {

bool takes_pooled_term(const NetworkSpec& spec, NodeId id) {
  if (id.level == 0) return false;
  switch (spec.variant) {
    case Variant::Full: return true;
    case Variant::TopToBottom: return id.level + id.column < spec.depth;
    case Variant::NoDnim:
    case Variant::LeftToRight: return false;
  }
  return false;
}

}  // namespace

std::vector<NodeInput> node_inputs(const NetworkSpec& spec, NodeId id) {
  if (!has_node(spec, id)) throw ConfigError(node_name(id) + " is not part of this network");
  const auto& ch = spec.channels;
  const auto ci = [&](int level) { return ch[static_cast<std::size_t>(level)]; };
  std::vector<NodeInput> in;
  if (id.column == 0) {
    if (id.level == 0) in.push_back({InputKind::Image, {}, 1});
    else in.push_back({InputKind::Pooled, {id.level - 1, 0}, ci(id.level - 1)});
    return in;
  }
  for (int k = 0; k < id.column; ++k)
    if (has_node(spec, {id.level, k})) in.push_back({InputKind::Dense, {id.level, k}, ci(id.level)});
  if (takes_pooled_term(spec, id))
    in.push_back({InputKind::Pooled, {id.level - 1, id.column}, ci(id.level - 1)});
  in.push_back({InputKind::Upsampled, {id.level + 1, id.column - 1}, ci(id.level + 1)});
  return in;
}

int node_input_channels(const NetworkSpec& spec, NodeId id) {
  int n = 0;
  for (const auto& t : node_inputs(spec, id)) n += t.channels;
  return n;
}

ParamStore build(const NetworkSpec& spec) {
  spec.validate();
  ParamStore ps;
  Rng rng(spec.seed);
  auto conv = [&](const std::string& name, int in, int out, int k, bool bias) {
    auto& w = ps.add(name + ".weight", {out, in, k, k});
    xavier_uniform(w.value, in * k * k, out * k * k, rng);
    if (bias) ps.add(name + ".bias", {out});
  };
  auto norm = [&](const std::string& name, int channels) {
    ps.add(name + ".gamma", {channels}).value = Tensor({channels}, 1.0);
    ps.add(name + ".beta", {channels});
  };
  for (NodeId id : node_order(spec)) {
    const std::string base = node_name(id);
    const int out = spec.channels[static_cast<std::size_t>(id.level)];
    int in = node_input_channels(spec, id);
    if (spec.attention == Attention::SumFusion && is_fusion_node(id)) {
      const auto terms = node_inputs(spec, id);
      for (std::size_t k = 0; k < terms.size(); ++k)
        conv(base + ".proj" + std::to_string(k), terms[k].channels, out, 1, true);
      in = out;
    }
    // A bias right before instance norm is cancelled by the mean subtraction.
    const bool norm_on = spec.norm == Norm::Instance;
    conv(base + ".conv1", in, out, 3, !norm_on);
    if (norm_on) norm(base + ".norm1", out);
    conv(base + ".conv2", out, out, 3, !norm_on);
    if (norm_on) norm(base + ".norm2", out);
    if (is_fusion_node(id)) {
      const int hidden = out / spec.mlp_reduction;
      if (spec.attention == Attention::Full || spec.attention == Attention::NoSpatial) {
        auto& f1 = ps.add(base + ".ca.fc1", {hidden, out});
        xavier_uniform(f1.value, out, hidden, rng);
        auto& f2 = ps.add(base + ".ca.fc2", {out, hidden});
        xavier_uniform(f2.value, hidden, out, rng);
      }
      if (spec.attention == Attention::Full || spec.attention == Attention::NoChannel)
        conv(base + ".sa", 2, 1, 7, false);
    }
  }
  int fused = 0;
  for (int l : spec.fpfm_layers) fused += spec.channels[static_cast<std::size_t>(l)];
  conv("fpfm", fused, 1, 1, true);
  return ps;
}

ParamBinding::ParamBinding(Tape& tape, const ParamStore& params) : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& p : params) vars_.push_back(tape.leaf(p.value));
}

Var ParamBinding::operator()(const std::string& name) const { return vars_[params_->index_of(name)]; }

Var NodeGrid::get(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw DependencyOrderError(node_name(id) + " has not been computed yet");
  return it->second;
}

Var conv_block(Tape& tape, Var x, const ParamBinding& p, const std::string& prefix, const NetworkSpec& spec) {
  const bool norm = spec.norm == Norm::Instance;
  auto bias = [&](const char* conv) { return norm ? Var{} : p(prefix + conv + ".bias"); };
  Var h = conv2d(tape, x, p(prefix + ".conv1.weight"), bias(".conv1"), 1, 1);
  if (norm) h = instance_norm(tape, h, p(prefix + ".norm1.gamma"), p(prefix + ".norm1.beta"));
  h = relu(tape, h);
  Var y = conv2d(tape, h, p(prefix + ".conv2.weight"), bias(".conv2"), 1, 1);
  if (norm) y = instance_norm(tape, y, p(prefix + ".norm2.gamma"), p(prefix + ".norm2.beta"));
  if (spec.residual && tape.value(x).channels() == tape.value(y).channels()) y = add(tape, y, x);
  return relu(tape, y);
}

Var csam_channel(Tape& tape, Var features, Var fc1, Var fc2, Tensor* map_out) {
  Var mx = mlp_shared(tape, global_max_pool(tape, features), fc1, fc2);
  Var av = mlp_shared(tape, global_avg_pool(tape, features), fc1, fc2);
  Var m = sigmoid(tape, add(tape, mx, av));
  if (map_out) *map_out = tape.value(m);
  return scale_channels(tape, features, m);
}

Var csam_spatial(Tape& tape, Var features, Var kernel, Tensor* map_out) {
  const Var pooled[] = {channel_max(tape, features), channel_avg(tape, features)};
  Var m = sigmoid(tape, conv2d(tape, concat(tape, pooled), kernel, Var{}, 1, 3));
  if (map_out) *map_out = tape.value(m);
  return scale_spatial(tape, features, m);
}

Var dnim_node(Tape& tape, Var image, NodeId id, const NodeGrid& grid, const ParamBinding& p,
              const NetworkSpec& spec, const ForwardOptions& opts, ForwardTrace* trace) {
  const std::string base = node_name(id);
  const auto terms = node_inputs(spec, id);
  std::vector<Var> parts;
  parts.reserve(terms.size());
  for (const auto& t : terms) {
    switch (t.kind) {
      case InputKind::Image: parts.push_back(image); break;
      case InputKind::Dense: parts.push_back(grid.get(t.source)); break;
      case InputKind::Pooled: parts.push_back(maxpool2(tape, grid.get(t.source))); break;
      case InputKind::Upsampled: parts.push_back(upsample2(tape, grid.get(t.source))); break;
    }
  }
  if (trace) {
    ForwardTrace::Node rec{id, {}, terms, {}};
    for (Var v : parts) rec.input_shapes.push_back(tape.value(v).shape());
    trace->nodes.push_back(std::move(rec));
  }

  Var fused;
  if (!is_fusion_node(id)) {
    fused = parts.front();
  } else if (spec.attention == Attention::SumFusion) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::string proj = base + ".proj" + std::to_string(k);
      Var v = conv2d(tape, parts[k], p(proj + ".weight"), p(proj + ".bias"), 1, 0);
      fused = fused.valid() ? add(tape, fused, v) : v;
    }
  } else {
    fused = concat(tape, parts);
  }

  Var out = conv_block(tape, fused, p, base, spec);

  if (is_fusion_node(id)) {
    const bool use_ca = spec.attention == Attention::Full || spec.attention == Attention::NoSpatial;
    const bool use_sa = spec.attention == Attention::Full || spec.attention == Attention::NoChannel;
    const Tensor& v = tape.value(out);
    if (use_ca) {
      if (opts.unit_attention) {
        out = scale_channels(tape, out, tape.constant(Tensor({v.channels(), 1, 1}, 1.0)));
      } else {
        Tensor map;
        out = csam_channel(tape, out, p(base + ".ca.fc1"), p(base + ".ca.fc2"), trace ? &map : nullptr);
        if (trace) trace->channel_maps.push_back(std::move(map));
      }
    }
    if (use_sa) {
      if (opts.unit_attention) {
        out = scale_spatial(tape, out, tape.constant(Tensor({1, v.height(), v.width()}, 1.0)));
      } else {
        Tensor map;
        out = csam_spatial(tape, out, p(base + ".sa.weight"), trace ? &map : nullptr);
        if (trace) trace->spatial_maps.push_back(std::move(map));
      }
    }
  }
  if (trace) trace->nodes.back().shape = tape.value(out).shape();
  return out;
}

Var fpfm(Tape& tape, const NodeGrid& grid, const ParamBinding& p, const NetworkSpec& spec, ForwardTrace* trace) {
  if (spec.fpfm_layers.empty()) throw ConfigError("fpfm_layers must not be empty");
  std::vector<Var> branches;
  for (int level : spec.fpfm_layers) {
    Var v = grid.get(terminal_node(spec, level));
    for (int k = 0; k < level; ++k) v = upsample2(tape, v);
    branches.push_back(v);
  }
  Var g = concat(tape, branches);
  if (trace) trace->fpfm_channels = tape.value(g).channels();
  return sigmoid(tape, conv2d(tape, g, p("fpfm.weight"), p("fpfm.bias"), 1, 0));
}

NetworkOutput forward(Tape& tape, const Tensor& image, const ParamStore& params, const NetworkSpec& spec,
                      const ForwardOptions& opts, ForwardTrace* trace) {
  spec.validate();
  if (image.rank() != 3 || image.channels() != 1)
    throw InvalidShapeError("network input must be (1,H,W), got " + shape_str(image.shape()));
  const int factor = 1 << spec.depth;
  if (image.height() % factor || image.width() % factor)
    throw InvalidShapeError("input extents " + shape_str(image.shape()) + " not divisible by 2^" +
                            std::to_string(spec.depth));
  NetworkOutput out{Var{}, NodeGrid{}, ParamBinding(tape, params)};
  Var x = tape.constant(image);
  for (NodeId id : node_order(spec)) out.grid.set(id, dnim_node(tape, x, id, out.grid, out.params, spec, opts, trace));
  out.prob = fpfm(tape, out.grid, out.params, spec, trace);
  return out;
}

Tensor predict(const Tensor& image, const ParamStore& params, const NetworkSpec& spec) {
  Tape tape;
  auto out = forward(tape, image, params, spec);
  return tape.value(out.prob);
}

double loss_and_gradients(const Tensor& image, const Tensor& mask, const ParamStore& params,
                          const NetworkSpec& spec, std::vector<std::vector<double>>& grads) {
  Tape tape;
  auto out = forward(tape, image, params, spec);
  Var loss = soft_iou_loss(tape, out.prob, tape.constant(mask));
  tape.backward(loss);
  grads.resize(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = tape.grad(out.params.vars()[k]);
    grads[k].assign(g.begin(), g.end());
  }
  return tape.value(loss)[0];
}

double loss_and_gradients(const Tensor& image, const Tensor& mask, ParamStore& params, const NetworkSpec& spec) {
  std::vector<std::vector<double>> grads;
  const double loss = loss_and_gradients(image, mask, std::as_const(params), spec, grads);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].value.grad();
    std::copy(grads[k].begin(), grads[k].end(), dst.begin());
  }
  return loss;
}

}  // namespace sirst
