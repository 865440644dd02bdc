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

#include "lpnas/genotype.h"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "lpnas/error.h"

namespace lpnas {

namespace {

struct KindCode {
  BlockKind kind;
  const char* code;
};

// Longest codes first so prefix matching is unambiguous.
constexpr KindCode kKindCodes[] = {
    {BlockKind::kCSPConv, "CSPC"},  {BlockKind::kCSPMBConv, "CSPM"},
    {BlockKind::kConvBnAct, "CBA"}, {BlockKind::kConvSE, "CSE"},
    {BlockKind::kMBConvNoRes, "MBN"}, {BlockKind::kConvAct, "CA"},
    {BlockKind::kMBConv, "MB"},     {BlockKind::kDenseNet, "DN"},
    {BlockKind::kResNet, "RN"},
};

const char* CodeOf(BlockKind kind) {
  for (const auto& kc : kKindCodes) {
    if (kc.kind == kind) return kc.code;
  }
  return "?";
}

template <typename V>
const V& Pick(const std::vector<V>& options, Rng& rng) {
  return options[rng.Below(options.size())];
}

bool Contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

// Recursive-descent scanner over a genotype string.
class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  Genotype Parse() {
    Genotype g;
    g.tokens.push_back(Block());
    while (true) {
      Expect(';');
      if (Peek() == 'H') {
        ++pos_;
        break;
      }
      g.tokens.push_back(AnyToken());
    }
    if (pos_ != s_.size()) Fail("trailing characters after head marker 'H'");
    return g;
  }

 private:
  [[noreturn]] void Fail(const std::string& msg) const { throw SyntaxError(pos_, msg); }

  char Peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  void Expect(char c) {
    if (Peek() != c) Fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  bool Consume(std::string_view lit) {
    if (s_.substr(pos_, lit.size()) == lit) {
      pos_ += lit.size();
      return true;
    }
    return false;
  }

  Token AnyToken() {
    if (s_.substr(pos_, 2) == "B:") return Block();
    if (Consume("P:")) {
      if (Consume("avg")) return PoolToken{PoolKind::kAvg};
      if (Consume("max")) return PoolToken{PoolKind::kMax};
      Fail("pool kind must be 'avg' or 'max'");
    }
    if (Consume("D:")) {
      if (Consume("0.1")) return DropToken{1};
      if (Consume("0.2")) return DropToken{2};
      Fail("dropout rate must be 0.1 or 0.2");
    }
    Fail("expected a token ('B:', 'P:', 'D:') or 'H'");
  }

  BlockSpec Block() {
    if (!Consume("B:")) Fail("expected block 'B:'");
    BlockSpec spec;
    bool matched = false;
    for (const auto& kc : kKindCodes) {
      if (Consume(kc.code)) {
        spec.kind = kc.kind;
        matched = true;
        break;
      }
    }
    if (!matched) Fail("unknown block kind");
    if (UsesKernel(spec.kind)) {
      Field('k');
      const int k = Digits();
      if (k != 1 && k != 3 && k != 5) {
        Fail("kernel " + std::to_string(k) + " not in {1,3,5}", 1 + Len(k));
      }
      spec.kernel = k;
    }
    if (UsesExpansion(spec.kind)) {
      Field('e');
      const int e = Digits();
      if (e < 2 || e > 4) Fail("expansion " + std::to_string(e) + " not in {2,3,4}", 1 + Len(e));
      spec.expansion = e;
    }
    if (UsesWidth(spec.kind)) {
      Field('c');
      spec.width = Digits();
    }
    Field('a');
    if (Consume("R")) {
      spec.act = Activation::kRelu;
    } else if (Consume("G")) {
      spec.act = Activation::kGelu;
    } else {
      Fail("activation must be 'R' or 'G'");
    }
    return spec;
  }

  // Reports at the start of a just-consumed field value.
  [[noreturn]] void Fail(const std::string& msg, std::size_t back) const {
    throw SyntaxError(pos_ - back, msg);
  }

  static std::size_t Len(int v) { return std::to_string(v).size(); }

  void Field(char name) {
    if (Peek() != ',') Fail(std::string("expected ',") + name + "' field");
    ++pos_;
    if (Peek() != name) Fail(std::string("expected field '") + name + "'");
    ++pos_;
  }

  int Digits() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (pos_ == start) Fail("expected digits");
    if (pos_ - start > 1 && s_[start] == '0') {
      pos_ = start;
      Fail("leading zero in number");
    }
    int v = 0;
    auto [p, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
    if (ec != std::errc()) {
      pos_ = start;
      Fail("number out of range");
    }
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

std::string TokenString(const Token& tok) {
  if (const auto* b = std::get_if<BlockSpec>(&tok)) {
    std::string s = std::string("B:") + CodeOf(b->kind);
    if (b->kernel) s += ",k" + std::to_string(*b->kernel);
    if (b->expansion) s += ",e" + std::to_string(*b->expansion);
    if (b->width) s += ",c" + std::to_string(*b->width);
    s += b->act == Activation::kGelu ? ",aG" : ",aR";
    return s;
  }
  if (const auto* p = std::get_if<PoolToken>(&tok)) {
    return p->kind == PoolKind::kAvg ? "P:avg" : "P:max";
  }
  return std::get<DropToken>(tok).tenths == 1 ? "D:0.1" : "D:0.2";
}

bool IsBlock(const Token& t) { return std::holds_alternative<BlockSpec>(t); }
bool IsPool(const Token& t) { return std::holds_alternative<PoolToken>(t); }

std::vector<std::string> RangeProblems(const BlockSpec& b) {
  auto problems = CheckSpecFields(b);
  if (!problems.empty()) return problems;
  if (b.kernel && !Contains(KernelsFor(b.kind), *b.kernel)) {
    problems.push_back(std::string(BlockKindName(b.kind)) + " kernel out of range");
  }
  if (b.expansion && !Contains(ExpansionsFor(b.kind), *b.expansion)) {
    problems.push_back(std::string(BlockKindName(b.kind)) + " expansion out of range");
  }
  if (b.width && !Contains(WidthsFor(b.kind), *b.width)) {
    problems.push_back(std::string(BlockKindName(b.kind)) + " width " +
                       std::to_string(*b.width) + " out of range");
  }
  return problems;
}

// Draws every kind-specific field of `kind`, keeping the activation.
void ResampleFields(BlockSpec& b, Rng& rng) {
  b.kernel.reset();
  b.expansion.reset();
  b.width.reset();
  if (UsesKernel(b.kind)) b.kernel = Pick(KernelsFor(b.kind), rng);
  if (UsesExpansion(b.kind)) b.expansion = Pick(ExpansionsFor(b.kind), rng);
  if (UsesWidth(b.kind)) b.width = Pick(WidthsFor(b.kind), rng);
}

void ResampleOneField(BlockSpec& b, Rng& rng) {
  std::vector<char> fields;
  if (b.kernel) fields.push_back('k');
  if (b.expansion) fields.push_back('e');
  if (b.width) fields.push_back('c');
  fields.push_back('a');
  switch (Pick(fields, rng)) {
    case 'k': b.kernel = Pick(KernelsFor(b.kind), rng); break;
    case 'e': b.expansion = Pick(ExpansionsFor(b.kind), rng); break;
    case 'c': b.width = Pick(WidthsFor(b.kind), rng); break;
    default:
      b.act = rng.Bernoulli(0.5) ? Activation::kRelu : Activation::kGelu;
      break;
  }
}

Genotype Prefix(const Genotype& g, int cut) {
  Genotype out;
  int blocks = 0;
  for (const auto& t : g.tokens) {
    if (IsBlock(t) && blocks++ == cut) break;
    out.tokens.push_back(t);
  }
  return out;
}

Genotype Suffix(const Genotype& g, int cut) {
  Genotype out;
  int blocks = 0;
  bool on = false;
  for (const auto& t : g.tokens) {
    if (IsBlock(t) && blocks++ == cut) on = true;
    if (on) out.tokens.push_back(t);
  }
  return out;
}

Genotype Concat(Genotype a, const Genotype& b) {
  a.tokens.insert(a.tokens.end(), b.tokens.begin(), b.tokens.end());
  return a;
}

bool FitsCap(const Genotype& g, const SearchSpaceConfig& config) {
  return !config.param_cap ||
         ParamCountOf(g.tokens, config.in_channels, config.num_classes) <= *config.param_cap;
}

constexpr int kCapRetries = 32;

}  // namespace

void SearchSpaceConfig::Validate() const {
  if (max_blocks < 1) throw InvalidArgument("max_blocks must be >= 1");
  if (max_pools < 0) throw InvalidArgument("max_pools must be >= 0");
  if (allowed_kinds.empty()) throw InvalidArgument("allowed_kinds is empty");
  if (param_cap && *param_cap < 1) throw InvalidArgument("param_cap must be positive");
}

std::vector<int> KernelsFor(BlockKind kind) {
  return UsesKernel(kind) ? std::vector<int>{1, 3, 5} : std::vector<int>{};
}

std::vector<int> ExpansionsFor(BlockKind kind) {
  return UsesExpansion(kind) ? std::vector<int>{2, 3, 4} : std::vector<int>{};
}

std::vector<int> WidthsFor(BlockKind kind) {
  switch (kind) {
    case BlockKind::kConvAct:
    case BlockKind::kConvBnAct:
    case BlockKind::kConvSE:
    case BlockKind::kResNet:
      return {4, 8, 12, 16, 20, 24};
    case BlockKind::kMBConv:
    case BlockKind::kMBConvNoRes:
      return {4, 8, 12, 16};
    case BlockKind::kDenseNet:
      return {4, 8, 12};
    default:
      return {};
  }
}

int Genotype::block_count() const {
  return static_cast<int>(std::count_if(tokens.begin(), tokens.end(), IsBlock));
}

int Genotype::pool_count() const {
  return static_cast<int>(std::count_if(tokens.begin(), tokens.end(), IsPool));
}

std::vector<Violation> validate(const Genotype& g, const SearchSpaceConfig& config) {
  std::vector<Violation> out;
  const int blocks = g.block_count();
  if (blocks < 1 || blocks > config.max_blocks) {
    out.push_back({"block_count", std::to_string(blocks) + " blocks, allowed 1.." +
                                      std::to_string(config.max_blocks)});
  }
  if (g.pool_count() > config.max_pools) {
    out.push_back({"pool_count", std::to_string(g.pool_count()) + " pools, max " +
                                     std::to_string(config.max_pools)});
  }
  if (!g.tokens.empty() && !IsBlock(g.tokens.front())) {
    out.push_back({"leading_token", "first token must be a block"});
  }
  int pools_in_gap = 0, drops_in_gap = 0;
  bool spacing_reported = false, drop_reported = false;
  for (const auto& t : g.tokens) {
    if (const auto* b = std::get_if<BlockSpec>(&t)) {
      pools_in_gap = drops_in_gap = 0;
      if (std::find(config.allowed_kinds.begin(), config.allowed_kinds.end(), b->kind) ==
          config.allowed_kinds.end()) {
        out.push_back({"kind_not_allowed", BlockKindName(b->kind)});
      }
      for (auto& p : RangeProblems(*b)) out.push_back({"range", p});
    } else if (IsPool(t) && ++pools_in_gap > 1 && !spacing_reported) {
      out.push_back({"pool_spacing", "more than one pool between consecutive blocks"});
      spacing_reported = true;
    } else if (!IsBlock(t) && !IsPool(t) && ++drops_in_gap > 1 && !drop_reported) {
      out.push_back({"drop_spacing", "more than one dropout between consecutive blocks"});
      drop_reported = true;
    }
  }
  // The cap needs a buildable network; skip it if anything else failed.
  if (config.param_cap && out.empty()) {
    const auto params = ParamCountOf(g.tokens, config.in_channels, config.num_classes);
    if (params > *config.param_cap) {
      out.push_back({"param_cap", std::to_string(params) + " parameters > cap " +
                                      std::to_string(*config.param_cap)});
    }
  }
  return out;
}

std::string serialize(const Genotype& g) {
  std::string s;
  for (const auto& t : g.tokens) {
    s += TokenString(t);
    s += ';';
  }
  return s + "H";
}

Genotype parse_syntax(std::string_view code) { return Parser(code).Parse(); }

Genotype parse(std::string_view code, const SearchSpaceConfig& config) {
  Genotype g = parse_syntax(code);
  auto violations = validate(g, config);
  if (!violations.empty()) {
    std::vector<std::string> msgs;
    for (const auto& v : violations) msgs.push_back(v.code + " (" + v.detail + ")");
    throw ValidationError(std::move(msgs));
  }
  return g;
}

BlockSpec SampleBlock(const SearchSpaceConfig& config, Rng& rng) {
  BlockSpec b;
  b.kind = Pick(config.allowed_kinds, rng);
  ResampleFields(b, rng);
  b.act = rng.Bernoulli(0.5) ? Activation::kRelu : Activation::kGelu;
  return b;
}

Genotype sample_random(const SearchSpaceConfig& config, Rng& rng) {
  for (int attempt = 0;; ++attempt) {
    Genotype g;
    const int blocks = rng.IntIn(1, config.max_blocks);
    int pools = 0;
    for (int i = 0; i < blocks; ++i) {
      g.tokens.push_back(SampleBlock(config, rng));
      if (pools < config.max_pools && rng.Bernoulli(config.pool_probability)) {
        g.tokens.push_back(PoolToken{rng.Bernoulli(0.5) ? PoolKind::kAvg : PoolKind::kMax});
        ++pools;
      }
      if (rng.Bernoulli(config.dropout_probability)) {
        g.tokens.push_back(DropToken{rng.IntIn(1, 2)});
      }
    }
    if (FitsCap(g, config)) return g;
    if (attempt > 10000) {
      throw InvalidArgument("param_cap too small: no architecture found within cap");
    }
  }
}

Genotype repair(Genotype g, const SearchSpaceConfig& config) {
  std::vector<Token> kept;
  int blocks = 0;
  bool pool_in_gap = false, drop_in_gap = false;
  for (auto& t : g.tokens) {
    if (IsBlock(t)) {
      if (blocks == config.max_blocks) break;  // tail truncation
      ++blocks;
      pool_in_gap = drop_in_gap = false;
      kept.push_back(std::move(t));
    } else if (blocks == 0) {
      continue;  // leading structural token
    } else if (IsPool(t)) {
      if (pool_in_gap) continue;
      pool_in_gap = true;
      kept.push_back(std::move(t));
    } else {
      if (drop_in_gap) continue;
      drop_in_gap = true;
      kept.push_back(std::move(t));
    }
  }
  int excess = static_cast<int>(std::count_if(kept.begin(), kept.end(), IsPool)) -
               config.max_pools;
  for (auto it = kept.end(); excess > 0 && it != kept.begin();) {
    --it;
    if (IsPool(*it)) {
      it = kept.erase(it);
      --excess;
    }
  }
  g.tokens = std::move(kept);
  return g;
}

Genotype mutate(const Genotype& g, double p_mut, Rng& rng, const SearchSpaceConfig& config,
                int* edits) {
  for (int attempt = 0; attempt < kCapRetries; ++attempt) {
    int edited = 0;
    int blocks = g.block_count();
    Genotype out;
    for (const Token& tok : g.tokens) {
      if (!rng.Bernoulli(p_mut)) {
        out.tokens.push_back(tok);
        continue;
      }
      ++edited;
      enum Edit { kResample, kSwap, kInsert, kDelete };
      std::vector<Edit> options{kResample, kSwap};
      if (blocks < config.max_blocks) options.push_back(kInsert);
      if (!IsBlock(tok) || blocks > 1) options.push_back(kDelete);
      switch (Pick(options, rng)) {
        case kResample: {
          Token t = tok;
          if (auto* b = std::get_if<BlockSpec>(&t)) {
            ResampleOneField(*b, rng);
          } else if (auto* p = std::get_if<PoolToken>(&t)) {
            p->kind = p->kind == PoolKind::kAvg ? PoolKind::kMax : PoolKind::kAvg;
          } else {
            auto& d = std::get<DropToken>(t);
            d.tenths = d.tenths == 1 ? 2 : 1;
          }
          out.tokens.push_back(std::move(t));
          break;
        }
        case kSwap: {
          if (const auto* b = std::get_if<BlockSpec>(&tok)) {
            BlockSpec nb = *b;
            std::vector<BlockKind> others;
            for (BlockKind k : config.allowed_kinds) {
              if (k != b->kind) others.push_back(k);
            }
            if (!others.empty()) nb.kind = Pick(others, rng);
            ResampleFields(nb, rng);
            out.tokens.push_back(nb);
          } else if (IsPool(tok)) {
            out.tokens.push_back(DropToken{rng.IntIn(1, 2)});
          } else {
            out.tokens.push_back(PoolToken{rng.Bernoulli(0.5) ? PoolKind::kAvg : PoolKind::kMax});
          }
          break;
        }
        case kInsert:
          out.tokens.push_back(tok);
          out.tokens.push_back(SampleBlock(config, rng));
          ++blocks;
          break;
        case kDelete:
          if (IsBlock(tok)) --blocks;
          break;
      }
    }
    Genotype repaired = repair(std::move(out), config);
    if (FitsCap(repaired, config)) {
      if (edits) *edits = edited;
      return repaired;
    }
  }
  if (edits) *edits = 0;
  return g;
}

std::pair<Genotype, Genotype> crossover_at(const Genotype& a, const Genotype& b, int cut,
                                           const SearchSpaceConfig& config) {
  const int max_cut = std::min(a.block_count(), b.block_count());
  if (cut < 0 || cut > max_cut) {
    throw InvalidArgument("crossover cut " + std::to_string(cut) + " outside 0.." +
                          std::to_string(max_cut));
  }
  return {repair(Concat(Prefix(a, cut), Suffix(b, cut)), config),
          repair(Concat(Prefix(b, cut), Suffix(a, cut)), config)};
}

std::pair<Genotype, Genotype> crossover(const Genotype& a, const Genotype& b, Rng& rng,
                                        const SearchSpaceConfig& config) {
  const int max_cut = std::min(a.block_count(), b.block_count());
  for (int attempt = 0; attempt < kCapRetries; ++attempt) {
    auto children = crossover_at(a, b, rng.IntIn(0, max_cut), config);
    if (FitsCap(children.first, config) && FitsCap(children.second, config)) return children;
  }
  return {a, b};
}

}  // namespace lpnas
