#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "sirst/errors.hpp"
#include "sirst/network.hpp"
#include "sirst/rng.hpp"

using namespace sirst;

namespace {

Tensor random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({1, h, w});
  for (double& v : t.data()) v = rng.normal(0.0, 1.0);
  return t;
}

Tensor random_mask(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({1, h, w});
  for (double& v : t.data()) v = rng.bernoulli(0.2) ? 1.0 : 0.0;
  return t;
}

int count_kind(const std::vector<NodeInput>& in, InputKind k) {
  int n = 0;
  for (const auto& t : in) n += t.kind == k;
  return n;
}

}  // namespace

TEST(NetworkSpec, Validation) {
  NetworkSpec s = NetworkSpec::tiny();
  EXPECT_NO_THROW(s.validate());
  s.channels = {4, 8};
  EXPECT_THROW(s.validate(), ConfigError);
  s = NetworkSpec::tiny();
  s.fpfm_layers = {};
  EXPECT_THROW(s.validate(), ConfigError);
  s = NetworkSpec::tiny();
  s.fpfm_layers = {2, 1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = NetworkSpec::tiny();
  s.fpfm_layers = {0, 3};
  EXPECT_THROW(s.validate(), ConfigError);
  s = NetworkSpec::tiny();
  s.mlp_reduction = 3;  // 4 is not divisible by 3
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(NetworkSpec, NamesRoundTrip) {
  for (Variant v : {Variant::Full, Variant::NoDnim, Variant::LeftToRight, Variant::TopToBottom})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  for (Attention a : {Attention::Full, Attention::NoChannel, Attention::NoSpatial, Attention::None,
                      Attention::SumFusion})
    EXPECT_EQ(parse_attention(to_string(a)), a);
  EXPECT_EQ(parse_norm(to_string(Norm::None)), Norm::None);
  EXPECT_EQ(parse_norm(to_string(Norm::Instance)), Norm::Instance);
  EXPECT_THROW(parse_variant("sideways"), ConfigError);
}

TEST(Wiring, NodeCountPerDepth) {
  for (int I : {2, 3, 4}) {
    NetworkSpec s;
    s.depth = I;
    s.channels.assign(static_cast<std::size_t>(I) + 1, 8);
    s.fpfm_layers.clear();
    for (int l = 0; l <= I; ++l) s.fpfm_layers.push_back(l);
    int expected = 0;
    for (int i = 0; i <= I; ++i) expected += I - i + 1;
    EXPECT_EQ(static_cast<int>(node_order(s).size()), expected);
  }
}

TEST(Wiring, MatchesEnumeratorForEveryVariant) {
  for (Variant v : {Variant::Full, Variant::NoDnim, Variant::LeftToRight, Variant::TopToBottom})
    for (int I : {2, 3, 4}) {
      NetworkSpec s;
      s.depth = I;
      s.channels.assign(static_cast<std::size_t>(I) + 1, 8);
      s.fpfm_layers = {0};
      s.variant = v;
      const auto expected = oracle::enumerate_grid(I, v);
      std::set<std::pair<int, int>> seen;
      for (NodeId id : node_order(s)) seen.insert({id.level, id.column});
      ASSERT_EQ(seen.size(), expected.size()) << to_string(v) << " I=" << I;
      for (const auto& n : expected) {
        ASSERT_TRUE(has_node(s, {n.level, n.column}));
        const auto in = node_inputs(s, {n.level, n.column});
        EXPECT_EQ(count_kind(in, InputKind::Dense), n.dense);
        EXPECT_EQ(count_kind(in, InputKind::Upsampled), n.upsampled);
        EXPECT_EQ(count_kind(in, InputKind::Pooled), n.pooled);
      }
    }
}

TEST(Wiring, InteriorFusionNodesTakeDensePooledAndUpsampled) {
  NetworkSpec s;  // I = 4
  int interior = 0;
  for (NodeId id : node_order(s)) {
    if (id.level == 0 || id.column == 0) continue;
    const auto in = node_inputs(s, id);
    EXPECT_EQ(count_kind(in, InputKind::Dense), id.column);
    EXPECT_EQ(count_kind(in, InputKind::Pooled), 1);
    EXPECT_EQ(count_kind(in, InputKind::Upsampled), 1);
    ++interior;
  }
  EXPECT_EQ(interior, 6);
  EXPECT_EQ(node_order(s).size(), 15u);
}

TEST(Wiring, TerminalNodes) {
  NetworkSpec s;
  for (int i = 0; i <= 4; ++i) {
    const NodeId t = terminal_node(s, i);
    EXPECT_EQ(t.level, i);
    EXPECT_EQ(t.column, 4 - i);
  }
}

TEST(Build, TinyParameterCountByHand) {
  // Without normalisation:
  // node (0,0): 1->4   conv 1*4*9+4 + 4*4*9+4                          =  188
  // node (1,0): 4->8   4*8*9+8 + 8*8*9+8                                =  880
  // node (2,0): 8->16  8*16*9+16 + 16*16*9+16                           = 3488
  // node (0,1): 4+8->4   436 + 148, attention 8+8, 98                   =  698
  // node (1,1): 8+4+16->8  2024 + 584, attention 32+32, 98              = 2770
  // node (0,2): 4+4+8->4   580 + 148, attention 8+8, 98                 =  842
  // fpfm: 4+8+16 -> 1 with bias                                          =   29
  NetworkSpec s = NetworkSpec::tiny();
  s.norm = Norm::None;
  EXPECT_EQ(build(s).scalar_count(), 8895u);
  // Instance norm adds gamma and beta twice per node, 4 * (4+8+16+4+8+4),
  // and drops the two block biases, 2 * 44.
  s.norm = Norm::Instance;
  EXPECT_EQ(build(s).scalar_count(), 8895u + 176u - 88u);
}

TEST(Build, CountMatchesLayerArithmeticAcrossConfigs) {
  for (Variant v : {Variant::Full, Variant::NoDnim, Variant::LeftToRight, Variant::TopToBottom})
    for (Attention a : {Attention::Full, Attention::NoChannel, Attention::NoSpatial, Attention::None,
                        Attention::SumFusion}) {
      for (Norm n : {Norm::None, Norm::Instance}) {
        NetworkSpec s = NetworkSpec::toy();
        s.variant = v;
        s.attention = a;
        s.norm = n;
        EXPECT_EQ(static_cast<long>(build(s).scalar_count()), oracle::count_parameters(s))
            << to_string(v) << "/" << to_string(a) << "/" << to_string(n);
      }
    }
}

TEST(Build, XavierBoundsAndZeroBias) {
  const ParamStore ps = build(NetworkSpec::tiny());
  const auto& w = ps.at("node.1.1.conv1.weight").value;
  const double bound = std::sqrt(6.0 / (28 * 9 + 8 * 9));
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  EXPECT_FALSE(ps.contains("node.1.1.conv1.bias"));
  NetworkSpec plain = NetworkSpec::tiny();
  plain.norm = Norm::None;
  const ParamStore biased = build(plain);
  for (double v : biased.at("node.1.1.conv1.bias").value.data()) EXPECT_EQ(v, 0.0);
  for (double v : ps.at("node.1.1.norm1.gamma").value.data()) EXPECT_EQ(v, 1.0);
  for (double v : ps.at("node.1.1.norm2.beta").value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Build, SeedDeterminesWeights) {
  NetworkSpec s = NetworkSpec::tiny();
  const ParamStore a = build(s), b = build(s);
  s.seed = 5;
  const ParamStore c = build(s);
  EXPECT_EQ(a[0].value.values(), b[0].value.values());
  EXPECT_NE(a[0].value.values(), c[0].value.values());
}

TEST(Forward, ShapesAndRange) {
  const NetworkSpec s = NetworkSpec::tiny();
  const ParamStore ps = build(s);
  Tape tape;
  ForwardTrace trace;
  auto out = forward(tape, random_image(16, 16, 1), ps, s, {}, &trace);
  const auto& p = tape.value(out.prob);
  ASSERT_EQ(p.shape(), (Shape{1, 16, 16}));
  for (double v : p.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(trace.fpfm_channels, 4 + 8 + 16);
  for (const auto& n : trace.nodes) {
    const int scale = 16 >> n.id.level;
    EXPECT_EQ(n.shape, (Shape{s.channels[n.id.level], scale, scale}));
    for (const auto& sh : n.input_shapes) {
      EXPECT_EQ(sh[1], scale);
      EXPECT_EQ(sh[2], scale);
    }
  }
}

TEST(Forward, FpfmChannelSumForSubsets) {
  NetworkSpec s;  // I = 4, channels 16..256
  s.channels = {2, 3, 4, 5, 6};
  s.mlp_reduction = 1;
  for (const std::vector<int>& layers : {std::vector<int>{0}, {3, 4}, {2, 3, 4}, {0, 1, 2, 3, 4}}) {
    s.fpfm_layers = layers;
    Tape tape;
    ForwardTrace trace;
    forward(tape, random_image(16, 16, 2), build(s), s, {}, &trace);
    int expected = 0;
    for (int l : layers) expected += s.channels[static_cast<std::size_t>(l)];
    EXPECT_EQ(trace.fpfm_channels, expected);
  }
}

TEST(Forward, RejectsBadInputs) {
  const NetworkSpec s = NetworkSpec::tiny();
  const ParamStore ps = build(s);
  Tape tape;
  EXPECT_THROW(forward(tape, Tensor({1, 18, 16}), ps, s), InvalidShapeError);
  EXPECT_THROW(forward(tape, Tensor({2, 16, 16}), ps, s), InvalidShapeError);
}

TEST(Forward, NodeOrderEnforced) {
  const NetworkSpec s = NetworkSpec::tiny();
  const ParamStore ps = build(s);
  Tape tape;
  ParamBinding p(tape, ps);
  NodeGrid grid;
  Var img = tape.constant(random_image(16, 16, 3));
  EXPECT_THROW(dnim_node(tape, img, {1, 1}, grid, p, s), DependencyOrderError);
}

TEST(Forward, AttentionMapsInUnitInterval) {
  const NetworkSpec s = NetworkSpec::tiny();
  Tape tape;
  ForwardTrace trace;
  forward(tape, random_image(16, 16, 4), build(s), s, {}, &trace);
  EXPECT_EQ(trace.channel_maps.size(), 3u);
  EXPECT_EQ(trace.spatial_maps.size(), 3u);
  for (const auto* maps : {&trace.channel_maps, &trace.spatial_maps})
    for (const auto& m : *maps)
      for (double v : m.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
}

TEST(Forward, UnitAttentionEqualsNoAttention) {
  NetworkSpec with = NetworkSpec::tiny();
  NetworkSpec without = with;
  without.attention = Attention::None;
  const ParamStore pw = build(with);
  ParamStore pn;
  for (const auto& p : pw)
    if (p.name.find(".ca.") == std::string::npos && p.name.find(".sa.") == std::string::npos)
      pn.add(p.name, p.value.shape()).value = p.value;
  const Tensor img = random_image(16, 16, 5);
  Tape t1, t2;
  const auto a = t1.value(forward(t1, img, pw, with, {.unit_attention = true}).prob);
  const auto b = t2.value(forward(t2, img, pn, without).prob);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a.data()[i], b.data()[i]);
}

TEST(Forward, EveryVariantRuns) {
  for (Variant v : {Variant::Full, Variant::NoDnim, Variant::LeftToRight, Variant::TopToBottom})
    for (Attention a : {Attention::Full, Attention::NoChannel, Attention::NoSpatial, Attention::None,
                        Attention::SumFusion}) {
      NetworkSpec s = NetworkSpec::tiny();
      s.variant = v;
      s.attention = a;
      s.norm = a == Attention::None ? Norm::None : Norm::Instance;
      const Tensor p = predict(random_image(8, 8, 6), build(s), s);
      EXPECT_EQ(p.shape(), (Shape{1, 8, 8}));
      EXPECT_TRUE(p.all_finite());
    }
}

TEST(Gradients, AlmostAllParametersReceiveSignal) {
  const NetworkSpec s = NetworkSpec::tiny();
  ParamStore ps = build(s);
  loss_and_gradients(random_image(16, 16, 7), random_mask(16, 16, 8), ps, s);
  std::size_t zeros = 0, total = 0;
  for (const auto& p : ps)
    for (double g : std::as_const(p.value).grad()) {
      zeros += g == 0.0;
      ++total;
    }
  EXPECT_LT(static_cast<double>(zeros) / static_cast<double>(total), 0.05);
}

TEST(Gradients, MatchFiniteDifferencesOnSampledEntries) {
  // The acceptance suite checks every entry; here a few per tensor.
  const NetworkSpec s = NetworkSpec::tiny();
  ParamStore ps = build(s);
  const Tensor img = random_image(8, 8, 9);
  const Tensor mask = random_mask(8, 8, 10);
  std::vector<std::vector<double>> grads;
  loss_and_gradients(img, mask, ps, s, grads);
  auto loss_at = [&]() {
    Tape tape;
    auto out = forward(tape, img, ps, s);
    return tape.value(soft_iou_loss(tape, out.prob, tape.constant(mask)))[0];
  };
  Rng rng(11);
  const double h = 1e-5;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto v = ps[k].value.data();
    for (int trial = 0; trial < 2; ++trial) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(v.size()) - 1));
      const double keep = v[i];
      v[i] = keep + h;
      const double up = loss_at();
      v[i] = keep - h;
      const double down = loss_at();
      v[i] = keep;
      const double num = (up - down) / (2 * h);
      const double denom = std::max({std::abs(num), std::abs(grads[k][i]), 1e-8});
      EXPECT_LT(std::abs(num - grads[k][i]) / denom, 1e-4) << ps[k].name << "[" << i << "]";
    }
  }
}
