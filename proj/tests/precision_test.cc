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

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "lpnas/genotype.h"
#include "lpnas/ops.h"
#include "lpnas/precision.h"
#include "lpnas/wrap.h"
#include "support/half_reference.h"
#include "support/test_util.h"

namespace lpnas {
namespace {

using testing::DecodeHalf;
using testing::RandomTensor;
using testing::ReferenceRound;

bool SameValue(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return a == b && std::signbit(a) == std::signbit(b);
}

TEST(ProjectFp16, Examples) {
  EXPECT_EQ(project_fp16(1.5), 1.5);
  EXPECT_EQ(project_fp16(0.1), 0.0999755859375);
  EXPECT_EQ(project_fp16(2049.0), 2048.0);
  EXPECT_EQ(project_fp16(2051.0), 2052.0);  // tie to even payload upward
  EXPECT_EQ(project_fp16(0.1f), 0.0999755859375f);
}

TEST(ProjectFp16, ReferenceOracleAgreesOnExamples) {
  EXPECT_EQ(ReferenceRound(0.1, true), 0.0999755859375);
  EXPECT_EQ(ReferenceRound(2049.0, true), 2048.0);
  EXPECT_EQ(DecodeHalf(0x3c00), 1.0);
  EXPECT_EQ(DecodeHalf(0x0001), std::ldexp(1.0, -24));
  EXPECT_EQ(DecodeHalf(0x7bff), 65504.0);
}

TEST(ProjectFp16, OverflowPolicies) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(project_fp16(70000.0), 65504.0);
  EXPECT_EQ(project_fp16(-1e30), -65504.0);
  EXPECT_EQ(project_fp16(inf), 65504.0);
  EXPECT_EQ(project_fp16(65519.999, OverflowPolicy::kInfinity), 65504.0);
  EXPECT_EQ(project_fp16(65520.0, OverflowPolicy::kInfinity), inf);
  EXPECT_EQ(project_fp16(-65520.0, OverflowPolicy::kInfinity), -inf);
  EXPECT_EQ(project_fp16(65519.999), 65504.0);
}

TEST(ProjectFp16, SubnormalsAndZeros) {
  const double tiny = std::ldexp(1.0, -24);
  EXPECT_EQ(project_fp16(tiny), tiny);
  EXPECT_EQ(project_fp16(3 * tiny), 3 * tiny);
  EXPECT_EQ(project_fp16(0.5 * tiny), 0.0);  // tie to the even payload 0
  EXPECT_EQ(project_fp16(0.5000001 * tiny), tiny);
  EXPECT_EQ(project_fp16(1.5 * tiny), 2 * tiny);
  EXPECT_TRUE(std::signbit(project_fp16(-0.0)));
  EXPECT_TRUE(std::signbit(project_fp16(-0.25 * tiny)));
  EXPECT_TRUE(std::isnan(project_fp16(std::nan(""))));
}

TEST(ProjectFp16, ExhaustiveExactnessAndIdempotence) {
  for (std::uint32_t b = 0; b < 0x10000; ++b) {
    const auto bits = static_cast<std::uint16_t>(b);
    const double h = DecodeHalf(bits);
    if (std::isnan(h)) {
      EXPECT_TRUE(std::isnan(project_fp16(h)));
      continue;
    }
    if (std::isinf(h)) continue;
    ASSERT_TRUE(SameValue(project_fp16(h), h)) << std::hex << b;
    ASSERT_TRUE(SameValue(FromHalfBits(bits), h)) << std::hex << b;
    ASSERT_EQ(ToHalfBits(h), bits) << std::hex << b;
  }
}

TEST(ProjectFp16, TiesAtEveryExponent) {
  // Midpoints between consecutive halves of every binade.
  for (int e = -24; e <= 15; ++e) {
    const double ulp = std::ldexp(1.0, std::max(e - 10, -24));
    const double base = e < -14 ? 0.0 : std::ldexp(1.0, e);
    for (int k : {0, 1, 2, 3, 1022}) {
      const double lo = base + k * ulp;
      const double mid = lo + ulp / 2;
      if (mid >= 65504.0) continue;
      for (bool sat : {true, false}) {
        ASSERT_EQ(project_fp16(mid, sat ? OverflowPolicy::kSaturate : OverflowPolicy::kInfinity),
                  ReferenceRound(mid, sat))
            << mid;
        ASSERT_EQ(project_fp16(-mid), -ReferenceRound(mid, true)) << mid;
      }
    }
  }
}

TEST(ProjectFp16, ConformanceOnRandomBinary32) {
  Rng rng(7);
  for (int i = 0; i < 200000; ++i) {
    const auto bits = static_cast<std::uint32_t>(rng.NextU64());
    const float f = std::bit_cast<float>(bits);
    if (std::isnan(f)) continue;
    for (bool sat : {true, false}) {
      const double got =
          project_fp16(static_cast<double>(f), sat ? OverflowPolicy::kSaturate : OverflowPolicy::kInfinity);
      ASSERT_TRUE(SameValue(got, ReferenceRound(f, sat))) << f;
    }
  }
}

TEST(ProjectFp16, MonotoneAndSymmetric) {
  Rng rng(8);
  for (int i = 0; i < 100000; ++i) {
    const double scale = std::ldexp(1.0, rng.IntIn(-26, 17));
    double x = rng.Normal() * scale, y = rng.Normal() * scale;
    if (x > y) std::swap(x, y);
    ASSERT_LE(project_fp16(x), project_fp16(y)) << x << " " << y;
    ASSERT_TRUE(SameValue(project_fp16(-x), -project_fp16(x))) << x;
    ASSERT_EQ(project_fp16(project_fp16(x)), project_fp16(x));
  }
}

TEST(ProjectFp16, TensorProjection) {
  Tensor<float> t(Shape{1, 1, 1, 3}, std::vector<float>{0.1f, 2049.0f, 1e6f});
  const auto p = ProjectTensor(t);
  EXPECT_EQ(p.vec(), (std::vector<float>{0.0999755859375f, 2048.0f, 65504.0f}));
}

TEST(Ste, LoneProjectionPassesGradientBitForBit) {
  Rng rng(9);
  Tape<double> tape;
  auto x = tape.Leaf(RandomTensor<double>(Shape{1, 2, 3, 3}, rng, 1e5));  // includes saturated entries
  auto w = RandomTensor<double>(Shape{1, 2, 3, 3}, rng);
  tape.Backward(weighted_sum(project_fp16_ste(x), w));
  EXPECT_EQ(tape.grad(x.id()).vec(), w.vec());
  const auto g = RandomTensor<double>(Shape{1, 1, 2, 2}, rng);
  EXPECT_EQ(ste_backward(g).vec(), g.vec());
  EXPECT_EQ(ste_backward(Tensor<double>(Shape{1, 1, 2, 2}, 1.0)).vec(), std::vector<double>(4, 1.0));
}

TEST(Clip, ValuesAndGradient) {
  Tape<double> tape;
  auto x = tape.Leaf(Tensor<double>(Shape{1, 1, 1, 5}, std::vector<double>{12.5, -15, 3.7, 20, 5}));
  auto y = clip_activation(x, 12.0);
  EXPECT_EQ(y.value().vec(), (std::vector<double>{12, -12, 3.7, 12, 5}));
  tape.Backward(weighted_sum(y, Tensor<double>(Shape{1, 1, 1, 5}, 2.0)));
  EXPECT_EQ(tape.grad(x.id()).vec(), (std::vector<double>{0, 0, 2, 0, 2}));
}

TEST(Clip, SubgradientOneAtBound) {
  Tape<double> tape;
  auto x = tape.Leaf(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{12, -12}));
  tape.Backward(sum(clip_activation(x, 12.0)));
  EXPECT_EQ(tape.grad(x.id()).vec(), (std::vector<double>{1, 1}));
  EXPECT_THROW(clip_activation(x, 0.0), InvalidArgument);
}

TEST(PrecisionConfig, Validation) {
  PrecisionConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.clip_bound = 0;
  EXPECT_THROW(c.Validate(), InvalidArgument);
  c.clip_bound = 65504;
  EXPECT_THROW(c.Validate(), InvalidArgument);
  c.clip_bound = 12;
  c.warmup_epochs = -1;
  EXPECT_THROW(c.Validate(), InvalidArgument);
}

TEST(PrecisionConfig, ProjectionSitesFollowFlags) {
  PrecisionConfig c;
  for (const auto& s : ProjectionSites(c)) EXPECT_TRUE(s.enabled);
  c.project_activations = false;
  for (const auto& s : ProjectionSites(c)) {
    EXPECT_EQ(s.enabled, s.location == SiteLocation::kWeightForward);
  }
}

// ---- wrapped networks ----

Network<double> BuildNet(const char* code, std::uint64_t seed) {
  return Network<double>::Build(parse_syntax(code).tokens, 3, 2, seed);
}

// Weights in {-1/4, 0, 1/4} and zero biases: every conv output on an input
// of multiples of 1/4 is a short dyadic number, hence FP16-exact.
void MakeDyadic(Network<double>& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : net.Parameters()) {
    if (p->name.find("bias") != std::string::npos) {
      p->value.Fill(0.0);
    } else {
      for (double& v : p->value.vec()) v = 0.25 * rng.IntIn(-1, 1);
    }
  }
}

Tensor<double> DyadicInput(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (double& v : t.vec()) v = 0.25 * rng.IntIn(-4, 4);
  return t;
}

constexpr const char* kDyadicNet = "B:CA,k3,c8,aR;P:max;B:CA,k1,c4,aR;H";

TEST(WrapNetwork, AllOffIsBitIdentical) {
  Rng rng(10);
  auto net = BuildNet("B:CBA,k3,c8,aG;P:avg;B:MB,e2,c8,aR;H", 3);
  const auto x = RandomTensor<double>(Shape{2, 3, 8, 8}, rng);
  const auto plain = eval_forward(net, x);
  PrecisionConfig off;
  off.project_activations = false;
  off.round_weights = false;
  wrap_network(net, off);
  EXPECT_EQ(eval_forward(net, x).vec(), plain.vec());
}

TEST(WrapNetwork, FixedPointOfProjection) {
  auto net = BuildNet(kDyadicNet, 4);
  MakeDyadic(net, 5);
  const auto x = DyadicInput(Shape{2, 3, 6, 6}, 6);
  const auto plain = eval_forward(net, x);
  for (double v : plain.vec()) ASSERT_LE(std::fabs(v), 12.0);
  wrap_network(net, PrecisionConfig{});
  EXPECT_EQ(eval_forward(net, x).vec(), plain.vec());
}

TEST(WrapNetwork, GradientsMatchUnprojectedWhenForwardIsExact) {
  auto grads = [](bool wrapped) {
    auto net = BuildNet(kDyadicNet, 4);
    MakeDyadic(net, 5);
    if (wrapped) wrap_network(net, PrecisionConfig{});
    Tape<double> tape;
    ForwardContext<double> ctx;
    ctx.tape = &tape;
    ctx.mode = ExecMode::kTrain;
    auto y = net.Forward(ctx, tape.Constant(DyadicInput(Shape{2, 3, 6, 6}, 6)));
    tape.Backward(weighted_sum(y, DyadicInput(y.shape(), 7)));
    std::vector<double> out;
    for (auto* p : net.Parameters()) out.insert(out.end(), p->grad.vec().begin(), p->grad.vec().end());
    return out;
  };
  EXPECT_EQ(grads(true), grads(false));
}

TEST(WrapNetwork, PostSiteActivationsAreRepresentable) {
  Rng rng(11);
  auto net = Network<float>::Build(parse_syntax("B:CA,k3,c8,aR;B:CA,k1,c8,aG;H").tokens, 3, 2, 2);
  wrap_network(net, PrecisionConfig{});
  // The head conv is the final operator, so the logits are a post-site tensor.
  const auto y = eval_forward(net, RandomTensor<float>(Shape{2, 3, 8, 8}, rng, 50.0));
  for (float v : y.vec()) {
    ASSERT_EQ(project_fp16(v), v);
    ASSERT_LE(std::fabs(v), 12.0f);
  }
}

TEST(WrapNetwork, MasterWeightsStayFullPrecision) {
  auto net = BuildNet("B:CA,k3,c4,aR;H", 1);
  const auto before = net.State();
  wrap_network(net, PrecisionConfig{});
  Rng rng(1);
  eval_forward(net, RandomTensor<double>(Shape{1, 3, 4, 4}, rng));
  const auto after = net.State();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].second.vec(), after[i].second.vec());
  bool any_inexact = false;
  for (const auto& [name, t] : after) {
    for (double v : t.vec()) any_inexact = any_inexact || project_fp16(v) != v;
  }
  EXPECT_TRUE(any_inexact);
}

TEST(WrapNetwork, DoubleWrapRejectedAndUnwrapRestores) {
  Rng rng(12);
  auto net = BuildNet("B:CBA,k3,c4,aR;H", 2);
  const auto x = RandomTensor<double>(Shape{1, 3, 4, 4}, rng);
  const auto plain = eval_forward(net, x);
  wrap_network(net, PrecisionConfig{});
  EXPECT_THROW(wrap_network(net, PrecisionConfig{}), InvalidArgument);
  EXPECT_NE(eval_forward(net, x).vec(), plain.vec());
  unwrap_network(net);
  EXPECT_FALSE(net.wrapped());
  EXPECT_EQ(eval_forward(net, x).vec(), plain.vec());
  PrecisionConfig bad;
  bad.clip_bound = -1;
  EXPECT_THROW(wrap_network(net, bad), InvalidArgument);
}

// ---- deploy mode ----

TEST(DeployMode, ExactIntermediatesMatchFp32Forward) {
  auto net = BuildNet(kDyadicNet, 4);
  MakeDyadic(net, 5);
  const auto x = DyadicInput(Shape{2, 3, 6, 6}, 6);
  EXPECT_EQ(deploy_mode_forward(net, x).vec(), eval_forward(net, x).vec());
}

TEST(DeployMode, InputProjectionIsIdempotent) {
  Rng rng(13);
  auto net = BuildNet("B:CSE,k3,c8,aG;P:max;B:RN,k3,c8,aR;H", 8);
  testing::RandomizeBatchNormAffine(net, 3);
  const auto x = RandomTensor<double>(Shape{2, 3, 8, 8}, rng);
  EXPECT_EQ(deploy_mode_forward(net, ProjectTensor(x)).vec(), deploy_mode_forward(net, x).vec());
}

TEST(DeployMode, OutputsAreRepresentableAndCloseToFp32) {
  Rng rng(14);
  auto net = BuildNet("B:CBA,k3,c8,aG;B:MB,e3,c8,aR;P:avg;B:DN,c8,aG;H", 9);
  testing::RandomizeBatchNormAffine(net, 4);
  const auto x = RandomTensor<double>(Shape{2, 3, 8, 8}, rng);
  const auto d = deploy_mode_forward(net, x);
  const auto f = eval_forward(net, x);
  double gap = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    ASSERT_EQ(project_fp16(d[i]), d[i]);
    gap = std::max(gap, std::fabs(d[i] - f[i]));
  }
  EXPECT_GT(gap, 0.0);
  EXPECT_LT(gap, 0.05);
}

TEST(DeployMode, NoClipping) {
  auto net = BuildNet("B:CA,k1,c4,aR;H", 1);
  for (auto* p : net.Parameters()) {
    if (p->name.find("bias") != std::string::npos) {
      p->value.Fill(0.0);
    } else {
      p->value.Fill(1.0);
    }
  }
  const auto y = deploy_mode_forward(net, Tensor<double>(Shape{1, 3, 2, 2}, 4.0));
  for (double v : y.vec()) EXPECT_EQ(v, 48.0);  // 3*4 per channel, 4 channels
}

TEST(DeployMode, DoesNotTouchRunningStatsOrWeights) {
  Rng rng(15);
  auto net = BuildNet("B:CBA,k3,c4,aR;H", 2);
  const auto before = net.State();
  deploy_mode_forward(net, RandomTensor<double>(Shape{2, 3, 4, 4}, rng));
  const auto after = net.State();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].second.vec(), after[i].second.vec());
}

}  // namespace
}  // namespace lpnas
