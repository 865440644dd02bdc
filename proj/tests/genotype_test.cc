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

#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "lpnas/blocks.h"
#include "lpnas/genotype.h"

namespace lpnas {
namespace {

bool HasCode(const std::vector<Violation>& v, const std::string& code) {
  for (const auto& x : v) {
    if (x.code == code) return true;
  }
  return false;
}

Genotype SixBlocks() {
  return parse("B:CA,k3,c8,aR;B:CBA,k1,c4,aG;P:max;B:CSE,k5,c12,aR;B:MB,e2,c8,aG;D:0.1;"
               "B:DN,c4,aR;B:RN,k3,c8,aR;H");
}

TEST(Parse, SingleBlockExample) {
  const Genotype g = parse("B:CA,k3,c8,aR;H");
  ASSERT_EQ(g.tokens.size(), 1u);
  const auto& b = std::get<BlockSpec>(g.tokens[0]);
  EXPECT_EQ(b.kind, BlockKind::kConvAct);
  EXPECT_EQ(b.kernel, 3);
  EXPECT_EQ(b.width, 8);
  EXPECT_FALSE(b.expansion);
  EXPECT_EQ(b.act, Activation::kRelu);
}

TEST(Parse, KernelOutOfRangePointsAtKField) {
  try {
    parse("B:CA,k7,c8,aR;H");
    FAIL() << "expected SyntaxError";
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.position(), 5u);
  }
}

TEST(Parse, SyntaxErrorsCarryPositions) {
  const std::pair<const char*, std::size_t> cases[] = {
      {"", 0},
      {"B:XX,k3,c8,aR;H", 2},
      {"B:CA,k3,c8,aQ;H", 12},
      {"B:CA,c8,aR;H", 5},
      {"B:CA,k3,c8,aR", 13},
      {"B:CA,k3,c8,aR;H;", 15},
      {"B:MB,e5,c8,aR;H", 5},
      {"B:CA,k3,c08,aR;H", 9},
      {"B:CA,k3,c8,aR;P:min;H", 16},
      {"B:CA,k3,c8,aR;D:0.3;H", 16},
  };
  for (const auto& [code, pos] : cases) {
    try {
      parse_syntax(code);
      ADD_FAILURE() << "accepted " << code;
    } catch (const SyntaxError& e) {
      EXPECT_EQ(e.position(), pos) << code << ": " << e.what();
    }
  }
}

TEST(Parse, SemanticViolationsAreNotSyntaxErrors) {
  std::string seven;
  for (int i = 0; i < 7; ++i) seven += "B:CA,k3,c8,aR;";
  seven += "H";
  EXPECT_NO_THROW(parse_syntax(seven));
  EXPECT_THROW(parse(seven), ValidationError);
  const std::string four_pools = "B:CA,k3,c8,aR;P:max;B:CA,k3,c8,aR;P:max;B:CA,k3,c8,aR;P:avg;"
                                 "B:CA,k3,c8,aR;P:avg;H";
  try {
    parse(four_pools);
    FAIL();
  } catch (const ValidationError& e) {
    ASSERT_EQ(e.violations().size(), 1u);
    EXPECT_EQ(e.violations()[0].rfind("pool_count", 0), 0u);
  }
  // Width outside the kind's range parses but does not validate.
  EXPECT_THROW(parse("B:CA,k3,c7,aR;H"), ValidationError);
}

TEST(Serialize, RoundTripOnCanonicalStrings) {
  const char* codes[] = {
      "B:CA,k3,c8,aR;H",
      "B:CSPC,aG;P:avg;B:CSPM,e3,aR;D:0.2;H",
      "B:MBN,e4,c16,aG;P:max;D:0.1;B:RN,k5,c24,aR;H",
  };
  for (const char* c : codes) EXPECT_EQ(serialize(parse(c)), c);
}

TEST(Validate, Examples) {
  SearchSpaceConfig space;
  Rng rng(1);
  EXPECT_TRUE(validate(sample_random(space, rng), space).empty());
  Genotype seven;
  for (int i = 0; i < 7; ++i) seven.tokens.push_back(BlockSpec{BlockKind::kConvAct, 3, {}, 8});
  const auto v = validate(seven);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].code, "block_count");
  SearchSpaceConfig capped;
  capped.param_cap = 50;
  EXPECT_TRUE(HasCode(validate(parse("B:CA,k3,c8,aR;H"), capped), "param_cap"));
  EXPECT_TRUE(HasCode(validate(Genotype{}), "block_count"));
  Genotype leading;
  leading.tokens = {PoolToken{}, BlockSpec{BlockKind::kConvAct, 3, {}, 8}};
  EXPECT_TRUE(HasCode(validate(leading), "leading_token"));
  SearchSpaceConfig only_ca;
  only_ca.allowed_kinds = {BlockKind::kConvAct};
  EXPECT_TRUE(HasCode(validate(parse("B:DN,c4,aR;H"), only_ca), "kind_not_allowed"));
  EXPECT_TRUE(HasCode(validate(parse_syntax("B:CA,k3,c8,aR;P:max;P:avg;H")), "pool_spacing"));
}

TEST(Validate, SearchSpaceConfigChecks) {
  SearchSpaceConfig c;
  c.max_blocks = 0;
  EXPECT_THROW(c.Validate(), InvalidArgument);
  c = {};
  c.allowed_kinds.clear();
  EXPECT_THROW(c.Validate(), InvalidArgument);
  c = {};
  c.param_cap = 0;
  EXPECT_THROW(c.Validate(), InvalidArgument);
}

TEST(SampleRandom, AllValidAndRoundTrip) {
  SearchSpaceConfig space;
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Genotype g = sample_random(space, rng);
    ASSERT_TRUE(IsValid(g, space)) << serialize(g);
    ASSERT_EQ(parse(serialize(g)), g);
  }
}

TEST(SampleRandom, DeterministicInSeed) {
  SearchSpaceConfig space;
  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_random(space, a), sample_random(space, b));
}

TEST(SampleRandom, BlockCountIsUniform) {
  SearchSpaceConfig space;
  Rng rng(4);
  std::array<int, 6> hist{};
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++hist[sample_random(space, rng).block_count() - 1];
  double chi2 = 0;
  for (int h : hist) chi2 += std::pow(h - n / 6.0, 2) / (n / 6.0);
  // Upper 1% point of chi-squared with 5 degrees of freedom.
  EXPECT_LT(chi2, 15.086) << chi2;
}

TEST(SampleRandom, KindFrequenciesAreUniform) {
  SearchSpaceConfig space;
  Rng rng(5);
  std::array<int, 9> hist{};
  const int n = 45000;
  for (int i = 0; i < n; ++i) ++hist[static_cast<int>(SampleBlock(space, rng).kind)];
  double chi2 = 0;
  for (int h : hist) chi2 += std::pow(h - n / 9.0, 2) / (n / 9.0);
  // Upper 1% point of chi-squared with 8 degrees of freedom.
  EXPECT_LT(chi2, 20.090) << chi2;
}

TEST(SampleRandom, RespectsParamCap) {
  SearchSpaceConfig space;
  space.param_cap = 2000;
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    EXPECT_LE(ParamCountOf(sample_random(space, rng).tokens), 2000);
  }
}

TEST(Mutate, ZeroRateIsIdentity) {
  SearchSpaceConfig space;
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const Genotype g = sample_random(space, rng);
    EXPECT_EQ(mutate(g, 0.0, rng, space), g);
  }
}

TEST(Mutate, FullRateNeverExceedsBlockCap) {
  SearchSpaceConfig space;
  Rng rng(8);
  const Genotype g = SixBlocks();
  for (int i = 0; i < 2000; ++i) {
    const Genotype m = mutate(g, 1.0, rng, space);
    ASSERT_LE(m.block_count(), 6);
    ASSERT_TRUE(IsValid(m, space)) << serialize(m);
  }
}

TEST(Mutate, ClosureOverRandomGenotypes) {
  SearchSpaceConfig space;
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const Genotype m = mutate(sample_random(space, rng), 0.15, rng, space);
    ASSERT_TRUE(IsValid(m, space)) << serialize(m);
  }
}

TEST(Mutate, DeterministicInSeed) {
  const Genotype g = SixBlocks();
  Rng a(10), b(10);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(mutate(g, 0.5, a), mutate(g, 0.5, b));
}

TEST(Mutate, EditedTokenCountMatchesRate) {
  const Genotype g = SixBlocks();
  Rng rng(11);
  const int trials = 100000;
  double total = 0;
  for (int i = 0; i < trials; ++i) {
    int edits = 0;
    mutate(g, 0.15, rng, {}, &edits);
    total += edits;
  }
  const double expected = 0.15 * static_cast<double>(g.tokens.size());
  EXPECT_NEAR(total / trials, expected, 0.05 * expected);
}

TEST(Crossover, CutAtZeroSwapsParents) {
  SearchSpaceConfig space;
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const Genotype a = sample_random(space, rng), b = sample_random(space, rng);
    auto [c1, c2] = crossover_at(a, b, 0, space);
    EXPECT_EQ(c1, b);
    EXPECT_EQ(c2, a);
  }
}

TEST(Crossover, SelfCrossoverIsIdentity) {
  SearchSpaceConfig space;
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const Genotype g = sample_random(space, rng);
    for (int cut = 0; cut <= g.block_count(); ++cut) {
      auto [c1, c2] = crossover_at(g, g, cut, space);
      EXPECT_EQ(c1, g);
      EXPECT_EQ(c2, g);
    }
  }
}

TEST(Crossover, ClosureAndBlockConservation) {
  SearchSpaceConfig space;
  Rng rng(14);
  for (int i = 0; i < 10000; ++i) {
    const Genotype a = sample_random(space, rng), b = sample_random(space, rng);
    auto [c1, c2] = crossover(a, b, rng, space);
    ASSERT_TRUE(IsValid(c1, space)) << serialize(c1);
    ASSERT_TRUE(IsValid(c2, space)) << serialize(c2);
    EXPECT_EQ(c1.block_count() + c2.block_count(), a.block_count() + b.block_count());
  }
}

TEST(Crossover, CutOutOfRangeThrows) {
  const Genotype a = parse("B:CA,k3,c8,aR;H"), b = SixBlocks();
  EXPECT_THROW(crossover_at(a, b, 2), InvalidArgument);
  EXPECT_THROW(crossover_at(a, b, -1), InvalidArgument);
}

TEST(Repair, TruncatesFromTheTail) {
  Genotype g = SixBlocks();
  g.tokens.push_back(BlockSpec{BlockKind::kConvAct, 1, {}, 4});
  g.tokens.push_back(PoolToken{});
  const Genotype r = repair(g);
  EXPECT_EQ(r, SixBlocks());
  Genotype pools;
  for (int i = 0; i < 5; ++i) {
    pools.tokens.push_back(BlockSpec{BlockKind::kConvAct, 1, {}, 4});
    pools.tokens.push_back(PoolToken{PoolKind::kAvg});
  }
  const Genotype rp = repair(pools);
  EXPECT_EQ(rp.pool_count(), 3);
  EXPECT_EQ(serialize(rp),
            "B:CA,k1,c4,aR;P:avg;B:CA,k1,c4,aR;P:avg;B:CA,k1,c4,aR;P:avg;B:CA,k1,c4,aR;B:CA,k1,"
            "c4,aR;H");
}

TEST(Ranges, PerKindTables) {
  EXPECT_EQ(WidthsFor(BlockKind::kConvAct), (std::vector<int>{4, 8, 12, 16, 20, 24}));
  EXPECT_EQ(WidthsFor(BlockKind::kMBConv), (std::vector<int>{4, 8, 12, 16}));
  EXPECT_EQ(WidthsFor(BlockKind::kDenseNet), (std::vector<int>{4, 8, 12}));
  EXPECT_TRUE(WidthsFor(BlockKind::kCSPConv).empty());
  EXPECT_EQ(KernelsFor(BlockKind::kResNet), (std::vector<int>{1, 3, 5}));
  EXPECT_TRUE(KernelsFor(BlockKind::kMBConv).empty());
  EXPECT_EQ(ExpansionsFor(BlockKind::kCSPMBConv), (std::vector<int>{2, 3, 4}));
}

}  // namespace
}  // namespace lpnas
