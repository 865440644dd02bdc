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

#ifndef LPNAS_GENOTYPE_H_
#define LPNAS_GENOTYPE_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lpnas/blocks.h"
#include "lpnas/rng.h"

namespace lpnas {

// Search-space bounds. Per-kind hyperparameter sets are fixed; see
// WidthsFor / KernelsFor / ExpansionsFor.
struct SearchSpaceConfig {
  int max_blocks = 6;
  int max_pools = 3;
  std::vector<BlockKind> allowed_kinds{std::begin(kAllBlockKinds),
                                       std::end(kAllBlockKinds)};
  // Optional hard cap on parameter count.
  std::optional<std::int64_t> param_cap;
  double pool_probability = 0.3;
  double dropout_probability = 0.2;
  int in_channels = 3;
  int num_classes = 2;

  void Validate() const;
};

std::vector<int> KernelsFor(BlockKind kind);
std::vector<int> ExpansionsFor(BlockKind kind);
std::vector<int> WidthsFor(BlockKind kind);

// Architecture code: blocks interleaved with pool/dropout tokens; the
// segmentation head is implicit.
struct Genotype {
  std::vector<Token> tokens;

  int block_count() const;
  int pool_count() const;
  bool operator==(const Genotype&) const = default;
};

struct Violation {
  std::string code;  // block_count, pool_count, pool_spacing, leading_token,
                     // drop_spacing, kind_not_allowed, range,
                     // param_cap
  std::string detail;
};

// Empty result means valid.
std::vector<Violation> validate(const Genotype& g, const SearchSpaceConfig& config = {});
inline bool IsValid(const Genotype& g, const SearchSpaceConfig& config = {}) {
  return validate(g, config).empty();
}

// Canonical text form, e.g. "B:CA,k3,c8,aR;P:max;B:MB,e4,c8,aG;H".
std::string serialize(const Genotype& g);

// Grammar check only; throws SyntaxError with a character position.
Genotype parse_syntax(std::string_view code);

// Grammar check plus validation; throws ValidationError for well-formed
// codes that break a structural constraint.
Genotype parse(std::string_view code, const SearchSpaceConfig& config = {});

// Uniform draw from the search space. Always valid.
Genotype sample_random(const SearchSpaceConfig& config, Rng& rng);
BlockSpec SampleBlock(const SearchSpaceConfig& config, Rng& rng);

// Deterministic tail repair: drops leading structural tokens, extra
// pool/dropout tokens inside one gap, blocks past max_blocks, and pools past
// max_pools (latest first).
Genotype repair(Genotype g, const SearchSpaceConfig& config = {});

// Per-token edit with probability p_mut. `edits`, if given, receives the
// number of edited tokens.
Genotype mutate(const Genotype& g, double p_mut, Rng& rng,
                const SearchSpaceConfig& config = {}, int* edits = nullptr);

// Single-point crossover at a shared block boundary `cut`
// (0 <= cut <= min block counts).
std::pair<Genotype, Genotype> crossover_at(const Genotype& a, const Genotype& b, int cut,
                                           const SearchSpaceConfig& config = {});
std::pair<Genotype, Genotype> crossover(const Genotype& a, const Genotype& b, Rng& rng,
                                        const SearchSpaceConfig& config = {});

}  // namespace lpnas

#endif  // LPNAS_GENOTYPE_H_
