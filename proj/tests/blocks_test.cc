// Copyright 2026 The LPNAS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "lpnas/blocks.h"
#include "lpnas/genotype.h"
#include "lpnas/ops.h"
#include "lpnas/wrap.h"
#include "support/test_util.h"

namespace lpnas {
namespace {

using testing::RandomTensor;

BlockSpec Spec(BlockKind kind, std::optional<int> k, std::optional<int> e, std::optional<int> c,
               Activation a = Activation::kRelu) {
  return BlockSpec{kind, k, e, c, a};
}

Tensor<double> RunBlock(Layer<double>& layer, const Tensor<double>& x,
                        ExecMode mode = ExecMode::kEval) {
  Tape<double> tape(false);
  ForwardContext<double> ctx;
  ctx.tape = &tape;
  ctx.mode = mode;
  Rng drop(0);
  ctx.dropout_rng = &drop;
  return layer.Forward(ctx, tape.Constant(x)).value();
}

std::int64_t CountOf(Layer<double>& layer) {
  std::int64_t n = 0;
  for (auto* p : layer.Parameters()) n += static_cast<std::int64_t>(p->value.size());
  return n;
}

// Closed-form parameter counts, written from the block definitions.
std::int64_t ExpectedParams(const BlockSpec& s, std::int64_t in) {
  const std::int64_t k2 = s.kernel ? *s.kernel * *s.kernel : 0;
  const std::int64_t w = s.width.value_or(0);
  switch (s.kind) {
    case BlockKind::kConvAct:
      return k2 * in * w + w;
    case BlockKind::kConvBnAct:
      return k2 * in * w + 2 * w;
    case BlockKind::kConvSE: {
      const std::int64_t r = std::max<std::int64_t>(4, w / 4);
      return (k2 * in * w + w) + (w * r + r) + (r * w + w);
    }
    case BlockKind::kMBConv:
    case BlockKind::kMBConvNoRes: {
      const std::int64_t h = in * *s.expansion;
      return (in * h + 2 * h) + (9 * h + 2 * h) + (h * w + 2 * w);
    }
    case BlockKind::kResNet:
      return (k2 * in * w + 2 * w) + (k2 * w * w + 2 * w) + (in != w ? in * w + w : 0);
    case BlockKind::kDenseNet:
      return 9 * in * w + 2 * w;
    case BlockKind::kCSPConv: {
      const std::int64_t h = (in + 1) / 2;
      return (9 * h * h + 2 * h) + (in * in + in);
    }
    case BlockKind::kCSPMBConv: {
      const std::int64_t h = (in + 1) / 2, hid = h * *s.expansion;
      return (h * hid + 2 * hid) + (9 * hid + 2 * hid) + (hid * h + 2 * h) + (in * in + in);
    }
  }
  return -1;
}

TEST(BuildBlock, ConvActExample) {
  Rng rng(1);
  auto b = build_block<double>(Spec(BlockKind::kConvAct, 3, {}, 8), 3, rng);
  EXPECT_EQ(b.out_channels, 8);
  EXPECT_EQ(CountOf(*b.layer), 224);
}

TEST(BuildBlock, DenseNetConcatenates) {
  Rng rng(2);
  auto b = build_block<double>(Spec(BlockKind::kDenseNet, {}, {}, 4), 6, rng);
  EXPECT_EQ(b.out_channels, 10);
  auto x = RandomTensor<double>(Shape{1, 6, 4, 4}, rng);
  auto y = RunBlock(*b.layer, x);
  ASSERT_EQ(y.shape().c, 10);
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < 16; ++i) EXPECT_EQ(y.at(0, c, i / 4, i % 4), x.at(0, c, i / 4, i % 4));
}

// Zeroing every conv weight leaves only the skip path.
void ZeroWeights(Layer<double>& layer) {
  for (auto* p : layer.Parameters()) {
    if (p->name.ends_with(".weight") || p->name.ends_with(".bias")) p->value.Fill(0.0);
  }
}

TEST(BuildBlock, MBConvResidualActiveOnEqualChannels) {
  Rng rng(3);
  auto b = build_block<double>(Spec(BlockKind::kMBConv, {}, 4, 8), 8, rng);
  EXPECT_EQ(b.out_channels, 8);
  ZeroWeights(*b.layer);
  const auto x = RandomTensor<double>(Shape{2, 8, 4, 4}, rng);
  EXPECT_EQ(RunBlock(*b.layer, x).vec(), x.vec());
  EXPECT_EQ(RunBlock(*b.layer, x, ExecMode::kTrain).vec(), x.vec());
}

TEST(BuildBlock, MBConvNoResHasNoSkip) {
  Rng rng(4);
  auto b = build_block<double>(Spec(BlockKind::kMBConvNoRes, {}, 2, 8), 8, rng);
  ZeroWeights(*b.layer);
  const auto y = RunBlock(*b.layer, RandomTensor<double>(Shape{1, 8, 4, 4}, rng));
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(BuildBlock, ResNetZeroInnerGivesActOfInput) {
  Rng rng(5);
  for (Activation a : {Activation::kRelu, Activation::kGelu}) {
    auto b = build_block<double>(Spec(BlockKind::kResNet, 3, {}, 8, a), 8, rng);
    ZeroWeights(*b.layer);
    const auto x = RandomTensor<double>(Shape{1, 8, 4, 4}, rng);
    Tape<double> tape(false);
    const auto expect = activation(tape.Constant(x), a).value();
    EXPECT_EQ(RunBlock(*b.layer, x).vec(), expect.vec());
  }
}

TEST(BuildBlock, ResNetProjectsShortcutOnChannelChange) {
  Rng rng(6);
  auto same = build_block<double>(Spec(BlockKind::kResNet, 3, {}, 8), 8, rng);
  auto diff = build_block<double>(Spec(BlockKind::kResNet, 3, {}, 8), 4, rng);
  auto names = [](Layer<double>& l) {
    std::set<std::string> s;
    for (auto* p : l.Parameters()) s.insert(p->name);
    return s;
  };
  EXPECT_FALSE(names(*same.layer).contains("shortcut.weight"));
  EXPECT_TRUE(names(*diff.layer).contains("shortcut.weight"));
}

TEST(BuildBlock, CspPassesUntouchedHalf) {
  Rng rng(7);
  for (BlockKind kind : {BlockKind::kCSPConv, BlockKind::kCSPMBConv}) {
    const int in = 7, head = 4;
    BlockSpec spec = Spec(kind, {}, kind == BlockKind::kCSPMBConv ? std::optional<int>(2) : std::nullopt,
                          {});
    auto b = build_block<double>(spec, in, rng);
    ASSERT_EQ(b.out_channels, in);
    for (auto* p : b.layer->Parameters()) {
      if (p->name == "transition.weight") {
        p->value.Fill(0.0);
        for (int c = 0; c < in; ++c) p->value.at(c, c, 0, 0) = 1.0;
      } else if (p->name.ends_with(".weight") || p->name.ends_with(".bias")) {
        p->value.Fill(0.0);
      }
    }
    const auto x = RandomTensor<double>(Shape{1, in, 3, 3}, rng);
    const auto y = RunBlock(*b.layer, x);
    for (int c = 0; c < in; ++c)
      for (int i = 0; i < 9; ++i) {
        const double expect = c < head ? 0.0 : x.at(0, c, i / 3, i % 3);
        EXPECT_EQ(y.at(0, c, i / 3, i % 3), expect) << BlockKindName(kind) << " c=" << c;
      }
  }
}

TEST(BuildBlock, SeGateReducesByQuarterWithFloor) {
  EXPECT_EQ(SeReducedChannels(24), 6);
  EXPECT_EQ(SeReducedChannels(8), 4);
  EXPECT_EQ(SeReducedChannels(4), 4);
}

TEST(BuildBlock, InvalidSpecsThrow) {
  Rng rng(8);
  EXPECT_THROW(build_block<double>(Spec(BlockKind::kConvAct, {}, {}, 8), 3, rng), InvalidArgument);
  EXPECT_THROW(build_block<double>(Spec(BlockKind::kConvAct, 3, 2, 8), 3, rng), InvalidArgument);
  EXPECT_THROW(build_block<double>(Spec(BlockKind::kConvAct, 7, {}, 8), 3, rng), InvalidArgument);
  EXPECT_THROW(build_block<double>(Spec(BlockKind::kMBConv, 3, 2, 8), 3, rng), InvalidArgument);
  EXPECT_THROW(build_block<double>(Spec(BlockKind::kCSPConv, {}, {}, 8), 3, rng), InvalidArgument);
  EXPECT_THROW(build_block<double>(Spec(BlockKind::kConvAct, 3, {}, 8), 0, rng), InvalidArgument);
  EXPECT_FALSE(CheckSpecFields(Spec(BlockKind::kDenseNet, 3, {}, 4)).empty());
  EXPECT_TRUE(CheckSpecFields(Spec(BlockKind::kDenseNet, {}, {}, 4)).empty());
}

TEST(ParamCount, EmptyNetworkIsHeadOnly) {
  auto net = Network<double>::Build({}, 4, 2, 0);
  EXPECT_EQ(param_count(net), 10);
}

TEST(ParamCount, DoublingWidthDoublesConvWeights) {
  Rng rng(9);
  auto a = build_block<double>(Spec(BlockKind::kConvAct, 3, {}, 8), 3, rng);
  auto b = build_block<double>(Spec(BlockKind::kConvAct, 3, {}, 16), 3, rng);
  auto weights = [](Layer<double>& l) {
    for (auto* p : l.Parameters()) {
      if (p->name == "conv.weight") return p->value.size();
    }
    return std::size_t{0};
  };
  EXPECT_EQ(weights(*b.layer), 2 * weights(*a.layer));
}

TEST(ParamCount, MatchesClosedFormAndEnumeration) {
  SearchSpaceConfig space;
  Rng rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const BlockSpec spec = SampleBlock(space, rng);
    const int in = rng.IntIn(1, 12);
    auto b = build_block<double>(spec, in, rng);
    EXPECT_EQ(CountOf(*b.layer), ExpectedParams(spec, in)) << BlockKindName(spec.kind) << " in=" << in;
  }
  auto g = sample_random(space, rng);
  auto net = Network<double>::Build(g.tokens, 3, 2, 1);
  std::int64_t n = 0;
  for (auto* p : net.Parameters()) n += static_cast<std::int64_t>(p->value.size());
  EXPECT_EQ(param_count(net), n);
  EXPECT_EQ(ParamCountOf(g.tokens), n);
}

TEST(MacCount, Examples) {
  // 1x1 conv C_in = C_out = 1 is the head of an empty 1-channel, 1-class network.
  auto unit = Network<double>::Build({}, 1, 1, 0);
  EXPECT_EQ(mac_count(unit, Shape{1, 1, 4, 4}), 16);
  auto net = Network<double>::Build(parse_syntax("B:CA,k3,c8,aR;H").tokens, 3, 2, 0);
  const std::int64_t head = 8 * 2 * 32 * 32;
  EXPECT_EQ(mac_count(net, Shape{1, 3, 32, 32}), 221184 + head);
  EXPECT_EQ(mac_count(net, Shape{1, 3, 16, 16}) * 4, mac_count(net, Shape{1, 3, 32, 32}));
}

TEST(MacCount, DepthwiseUsesGroupRule) {
  // MB e2 in=4: expand 4->8, dw 8 channels k3, project 8->4; plus head 4->2.
  auto net = Network<double>::Build(parse_syntax("B:MB,e2,c4,aR;H").tokens, 4, 2, 0);
  const std::int64_t hw = 8 * 8;
  EXPECT_EQ(mac_count(net, Shape{1, 4, 8, 8}), (4 * 8 + 8 * 9 + 8 * 4 + 4 * 2) * hw);
}

TEST(Properties, SampledBlocksBuildAndStayFinite) {
  SearchSpaceConfig space;
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const BlockSpec spec = SampleBlock(space, rng);
    const int in = rng.IntIn(1, 16);
    Rng init(trial);
    auto b = build_block<float>(spec, in, init);
    Tensor<float> x(Shape{1, in, 4, 4});
    for (float& v : x.vec()) v = static_cast<float>(rng.Uniform(-1, 1));
    Tape<float> tape(false);
    ForwardContext<float> ctx;
    ctx.tape = &tape;
    auto y = b.layer->Forward(ctx, tape.Constant(x));
    ASSERT_EQ(y.shape(), (Shape{1, b.out_channels, 4, 4})) << BlockKindName(spec.kind);
    for (float v : y.value().vec()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Properties, HeadRestoresInputResolution) {
  Rng rng(12);
  for (int pools = 0; pools <= 3; ++pools) {
    std::string code = "B:CA,k3,c4,aR";
    for (int p = 0; p < pools; ++p) code += ";P:max;B:CA,k1,c4,aG";
    code += ";H";
    auto net = Network<double>::Build(parse_syntax(code).tokens, 3, 2, 0);
    EXPECT_EQ(net.head_spec().upsample_factor(), 1 << pools);
    for (int size : {32, 16, 13}) {
      const auto y = eval_forward(net, RandomTensor<double>(Shape{1, 3, size, size}, rng));
      EXPECT_EQ(y.shape(), (Shape{1, 2, size, size})) << code;
    }
  }
}

TEST(Network, CloneCastAndStateRoundTrip) {
  Rng rng(13);
  auto net = Network<double>::Build(
      parse_syntax("B:CBA,k3,c8,aG;P:avg;B:CSPM,e2,aR;D:0.1;B:RN,k3,c4,aR;H").tokens, 3, 2, 5);
  testing::RandomizeBatchNormAffine(net, 6);
  const auto x = RandomTensor<double>(Shape{1, 3, 8, 8}, rng);
  const auto ref = eval_forward(net, x);
  auto copy = net.Clone();
  EXPECT_EQ(eval_forward(copy, x).vec(), ref.vec());
  auto fresh = Network<double>::Build(net.tokens(), 3, 2, 99);
  fresh.LoadState(net.State());
  EXPECT_EQ(eval_forward(fresh, x).vec(), ref.vec());
  auto f32 = net.CastTo<float>();
  const auto y32 = eval_forward(f32, x.Cast<float>());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y32[i], ref[i], 1e-4);
}

TEST(Network, WrongInputChannelsThrow) {
  auto net = Network<double>::Build(parse_syntax("B:CA,k3,c4,aR;H").tokens, 3, 2, 0);
  EXPECT_THROW(eval_forward(net, Tensor<double>(Shape{1, 2, 4, 4})), ShapeError);
}

TEST(Network, BuildIsDeterministicInSeed) {
  const auto tokens = parse_syntax("B:CSE,k5,c12,aG;B:DN,c8,aR;H").tokens;
  auto a = Network<double>::Build(tokens, 3, 2, 7).State();
  auto b = Network<double>::Build(tokens, 3, 2, 7).State();
  auto c = Network<double>::Build(tokens, 3, 2, 8).State();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second.vec(), b[i].second.vec());
  EXPECT_NE(a[0].second.vec(), c[0].second.vec());
}

}  // namespace
}  // namespace lpnas
