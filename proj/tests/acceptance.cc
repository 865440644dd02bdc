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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. `acceptance <name>...` runs a subset.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.h"
#include "lpnas/gradcheck.h"
#include "lpnas/metrics.h"
#include "lpnas/precision.h"
#include "lpnas/report.h"
#include "lpnas/search.h"
#include "support/half_reference.h"
#include "support/test_util.h"

namespace lpnas {
namespace {

namespace fs = std::filesystem;
using testing::ReadBytes;
using testing::TempDir;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Verdict()> run;
};

std::string Fmt(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

bool SameValue(double a, double b) {
  return std::isnan(a) ? std::isnan(b) : std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

// ---- FP16 conformance ----

Verdict Fp16Conformance() {
  long checks = 0, mismatches = 0;
  auto check = [&](double x, bool sat) {
    const double got =
        project_fp16(x, sat ? OverflowPolicy::kSaturate : OverflowPolicy::kInfinity);
    ++checks;
    if (!SameValue(got, testing::ReferenceRound(x, sat))) {
      if (mismatches++ < 5) std::fprintf(stderr, "  fp16 mismatch at %.17g\n", x);
    }
  };
  for (std::uint32_t b = 0; b < 0x10000; ++b) {
    const double h = testing::DecodeHalf(static_cast<std::uint16_t>(b));
    if (std::isnan(h)) continue;
    if (!std::isinf(h)) {
      ++checks;
      if (ToHalfBits(h) != b) ++mismatches;
    }
    check(h, true);
    check(h, false);
  }
  Rng rng(2026);
  for (int i = 0; i < 1000000; ++i) {
    const float f = std::bit_cast<float>(static_cast<std::uint32_t>(rng.NextU64()));
    if (std::isnan(f)) continue;
    check(f, true);
    check(f, false);
  }
  // Ties in every binade and the saturation boundary.
  for (int e = -24; e <= 15; ++e) {
    const double ulp = std::ldexp(1.0, std::max(e - 10, -24));
    const double base = e < -14 ? 0.0 : std::ldexp(1.0, e);
    for (int k = 0; k < 1024; k += 7) {
      for (double x : {base + k * ulp + ulp / 2, -(base + k * ulp + ulp / 2)}) {
        check(x, true);
        check(x, false);
      }
    }
  }
  for (double x : {65504.0, 65519.0, 65519.99999, 65520.0, 65536.0, 1e300}) {
    check(x, true);
    check(x, false);
    check(-x, true);
    check(-x, false);
  }
  return {mismatches == 0, Fmt("%ld mismatches in %ld checks", mismatches, checks)};
}

// ---- gradient correctness ----

Verdict GradientCorrectness() {
  const char* kinds[] = {"B:CA,k3,c4,aR;H",   "B:CBA,k3,c4,aR;H", "B:CSE,k3,c4,aR;H",
                         "B:MB,e2,c4,aR;H",   "B:MBN,e2,c4,aR;H", "B:CSPC,aR;H",
                         "B:CSPM,e2,aR;H",    "B:DN,c4,aR;H",     "B:RN,k3,c4,aR;H"};
  double worst = 0;
  std::string worst_code;
  for (const char* code : kinds) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto net = Network<double>::Build(parse_syntax(code).tokens, 3, 2, seed);
      testing::RandomizeBatchNormAffine(net, seed + 100);
      Rng rng(seed);
      FiniteDiffOptions opt;
      opt.seed = seed;
      const auto r =
          finite_diff_check(net, testing::RandomTensor<double>(Shape{2, 3, 6, 6}, rng), opt);
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_code = code;
      }
    }
  }
  return {worst < 1e-4, Fmt("max relative error %.3g over 9 kinds x 3 seeds (worst %s)", worst,
                            worst_code.c_str())};
}

// ---- genotype closure ----

Verdict GenotypeClosure() {
  const SearchSpaceConfig space;
  Rng rng(11);
  long failures = 0;
  auto closed = [&](const Genotype& g) {
    const std::string s = serialize(g);
    const bool ok = validate(g, space).empty() && parse(s, space) == g && serialize(parse(s)) == s;
    if (!ok && failures++ < 5) std::fprintf(stderr, "  not closed: %s\n", s.c_str());
  };
  std::vector<Genotype> pool;
  for (int i = 0; i < 10000; ++i) {
    pool.push_back(sample_random(space, rng));
    closed(pool.back());
  }
  for (int i = 0; i < 10000; ++i) {
    pool[i] = mutate(pool[i], 0.15, rng, space);
    closed(pool[i]);
  }
  for (int i = 0; i < 10000; ++i) {
    const auto kids = crossover(pool[i], pool[(i * 7919 + 1) % 10000], rng, space);
    closed(kids.first);
    closed(kids.second);
  }
  return {failures == 0, Fmt("%ld failures over 10000 samples, mutations and crossovers", failures)};
}

// ---- mIoU oracle ----

struct Fraction {
  std::int64_t num = 0, den = 1;
};

// Exact per-image mIoU as a reduced fraction, by pixel counting.
Fraction RationalMiou(const Labels& pred, const Labels& target) {
  std::int64_t inter[2] = {0, 0}, uni[2] = {0, 0};
  for (std::size_t i = 0; i < target.vec().size(); ++i) {
    const int t = target.vec()[i], p = pred.vec()[i];
    if (t == kIgnoreLabel) continue;
    for (int c = 0; c < 2; ++c) {
      inter[c] += (p == c && t == c);
      uni[c] += (p == c || t == c);
    }
  }
  Fraction sum{0, 1};
  int classes = 0;
  for (int c = 0; c < 2; ++c) {
    if (uni[c] == 0) continue;
    sum = {sum.num * uni[c] + inter[c] * sum.den, sum.den * uni[c]};
    ++classes;
  }
  if (classes == 0) return {1, 1};
  sum.den *= classes;
  const std::int64_t g = std::gcd(sum.num, sum.den);
  return {sum.num / g, sum.den / g};
}

Verdict MiouOracle() {
  Rng rng(5);
  int exact = 0, float_misses = 0;
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double ignore = i % 2 ? 0.2 : 0.0;
    Labels pred(Shape{1, 1, 8, 8}), target(Shape{1, 1, 8, 8});
    const double bias = rng.Uniform();
    for (auto& v : pred.vec()) v = rng.Bernoulli(bias) ? 1 : 0;
    for (auto& v : target.vec()) {
      v = rng.Bernoulli(ignore) ? kIgnoreLabel : (rng.Bernoulli(bias) ? 1 : 0);
    }
    const Fraction f = RationalMiou(pred, target);
    const double got = miou(pred, target);
    // Bitwise against the correctly rounded value of the reduced fraction.
    if (got == static_cast<double>(f.num) / static_cast<double>(f.den)) ++exact;
    const double err = std::abs(got - static_cast<double>(f.num) / f.den);
    worst = std::max(worst, err);
    float_misses += err > 1e-12;
  }
  return {float_misses == 0,
          Fmt("max |miou - oracle| %.3g; %d/1000 bit-identical to the reduced fraction", worst,
              exact)};
}

// ---- elitism monotonicity ----

Verdict ElitismMonotonicity() {
  SyntheticConfig dc;
  dc.image_size = 16;
  dc.n_train = 50;
  dc.n_eval = 50;
  dc.seed = 3;
  const auto [train, eval] = generate_synthetic(dc);
  int bad_runs = 0;
  std::string trace;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SearchConfig cfg;
    cfg.ga.generations = 10;
    cfg.ga.population_size = 16;
    cfg.ga.seed = seed;
    cfg.train.e_fp32 = 2;
    cfg.train.batch_size = 16;
    cfg.threads = 1;
    const SearchResult r = run_search(cfg, train, eval);
    bool ok = r.history.size() == 10;
    for (std::size_t g = 1; g < r.history.size(); ++g) {
      ok = ok && r.history[g].max_fitness >= r.history[g - 1].max_fitness &&
           r.history[g].rows.size() == 16;
    }
    bad_runs += !ok;
    trace += Fmt(" seed%d:%.4f->%.4f", static_cast<int>(seed), r.history.front().max_fitness,
                 r.history.back().max_fitness);
  }
  return {bad_runs == 0, Fmt("%d/5 runs non-decreasing;", 5 - bad_runs) + trace};
}

// ---- gap recovery ----

Verdict GapRecovery() {
  const SyntheticConfig dc;  // 200 train / 50 eval at 32x32
  const auto [train, eval] = generate_synthetic(dc);
  const char* code = "B:CBA,k3,c8,aR;P:max;B:MB,e2,c8,aR;B:CBA,k3,c8,aR;H";
  const DeviceProfile profile;
  const PrecisionConfig precision;
  constexpr int kRuns = 20;
  std::vector<double> gap_ptq, gap_aligned, gap_self, gap_budget;
  for (int i = 0; i < kRuns; ++i) {
    const std::uint64_t seed = HashSeed({0x9a9, static_cast<std::uint64_t>(i)});
    TrainConfig tc;
    tc.seed = seed;
    auto net = Network<float>::Build(parse(code).tokens, 3, 2, WeightSeed(seed));
    train_fp32(net, train, tc);
    const double gpu = evaluate(net, eval, EvalMode::kFp32);
    gap_ptq.push_back(gpu - measure(net, eval, profile).miou_device);

    Network<float> aligned = net.Clone();
    finetune_fp16_aware(aligned, train, tc, precision);
    const double dev_aligned = measure(aligned, eval, profile).miou_device;
    gap_aligned.push_back(gpu - dev_aligned);
    gap_self.push_back(evaluate(aligned, eval, EvalMode::kFp32) - dev_aligned);

    // Same extra budget spent in plain FP32: separates training time from
    // precision alignment.
    Network<float> longer = net.Clone();
    TrainConfig extra = tc;
    extra.e_fp32 = tc.e_lp;
    extra.seed = HashSeed({seed, 1});
    train_fp32(longer, train, extra);
    gap_budget.push_back(gpu - measure(longer, eval, profile).miou_device);
    std::fprintf(stderr, "  run %2d gpu %.5f gap_ptq %+.5f gap_aligned %+.5f self %+.5f fp32_budget %+.5f\n",
                 i, gpu, gap_ptq.back(), gap_aligned.back(), gap_self.back(), gap_budget.back());
  }
  const GapStats s = gap_statistics(gap_ptq, gap_aligned);
  const GapStats self = gap_statistics(gap_ptq, gap_self);
  const GapStats budget = gap_statistics(gap_ptq, gap_budget);
  const bool pass = s.mean_gap_ptq > s.mean_gap_aligned && s.recovered_fraction > 0.3 &&
                    s.sign_test_p < 0.05;
  return {pass,
          Fmt("n=%d mean gap ptq %.5f aligned %.5f recovered %.3f sign %d/%d p=%.3g | "
              "self-referenced: gap %.5f recovered %.3f p=%.3g | fp32 same budget: gap %.5f "
              "recovered %.3f p=%.3g",
              kRuns, s.mean_gap_ptq, s.mean_gap_aligned, s.recovered_fraction,
              s.aligned_smaller, s.pairs - s.ties, s.sign_test_p, self.mean_gap_aligned,
              self.recovered_fraction, self.sign_test_p, budget.mean_gap_aligned,
              budget.recovered_fraction, budget.sign_test_p)};
}

// ---- determinism ----

int RunCli(std::vector<std::string> args) {
  args.insert(args.begin(), "lpnas");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "  lpnas %s failed: %s\n", args[1].c_str(), err.str().c_str());
  return code;
}

std::map<std::string, std::string> Tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = ReadBytes(e.path());
  }
  return out;
}

Verdict Determinism() {
  TempDir root("acceptance_determinism");
  const fs::path data = root.path() / "data";
  if (RunCli({"gen-data", "--out", data.string(), "--image-size", "16", "--n-train", "24",
              "--n-eval", "8", "--seed", "4"}) != 0) {
    return {false, "gen-data failed"};
  }
  std::vector<std::map<std::string, std::string>> runs, reports;
  for (const char* tag : {"a", "b"}) {
    const fs::path run = root.path() / (std::string("run_") + tag);
    const fs::path rep = root.path() / (std::string("report_") + tag);
    if (RunCli({"search", "--data", data.string(), "--out", run.string(), "--branch", "both",
                "--generations", "3", "--population-size", "6", "--n-random", "2",
                "--e-fp32", "2", "--e-lp", "1", "--batch-size", "8", "--seed", "17"}) != 0 ||
        RunCli({"report", "--runs", run.string(), "--out", rep.string()}) != 0) {
      return {false, "search or report failed"};
    }
    runs.push_back(Tree(run));
    reports.push_back(Tree(rep));
  }
  int csv = 0, svg = 0;
  for (const auto& [name, bytes] : runs[0]) csv += name.ends_with(".csv");
  for (const auto& [name, bytes] : reports[0]) {
    csv += name.ends_with(".csv");
    svg += name.ends_with(".svg");
  }
  const bool same = runs[0] == runs[1] && reports[0] == reports[1];
  return {same && svg > 0, Fmt("%s across two runs (%zu run files, %d CSV, %d SVG)",
                               same ? "byte-identical" : "DIFFERENT", runs[0].size(), csv, svg)};
}

// ---- fitness audit ----

Verdict FitnessAudit() {
  bool ok = fitness(10, 0.5, {1, 1, 0}) == 10.5;
  int violations = 0;
  const FitnessConfig cfg;
  for (double fps : {0.0, 5.0, 60.0, 250.0}) {
    double prev = fitness(fps, 0.0, cfg);
    for (int i = 1; i <= 10000; ++i) {
      const double f = fitness(fps, i / 10000.0, cfg);
      violations += !(f > prev);
      prev = f;
    }
  }
  for (double m : {0.0, 0.4, 1.0}) {
    double prev = fitness(0, m, cfg);
    for (int i = 1; i <= 10000; ++i) {
      const double f = fitness(i * 0.05, m, cfg);
      violations += !(f > prev);
      prev = f;
    }
  }
  ok = ok && violations == 0;
  return {ok, Fmt("fitness(10, 0.5 | 1,1,0) = %.17g; %d monotonicity violations", fitness(10, 0.5, {1, 1, 0}),
                  violations)};
}

}  // namespace
}  // namespace lpnas

int main(int argc, char** argv) {
  using namespace lpnas;
  const std::vector<Criterion> all = {
      {"fp16_conformance", 60, Fp16Conformance},
      {"gradient_correctness", 300, GradientCorrectness},
      {"genotype_closure", 60, GenotypeClosure},
      {"miou_oracle", 30, MiouOracle},
      {"elitism_monotonicity", 3600, ElitismMonotonicity},
      {"gap_recovery", 2700, GapRecovery},
      {"determinism", 600, Determinism},
      {"fitness_audit", 5, FitnessAudit},
  };
  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (argc > 1 && std::find_if(argv + 1, argv + argc, [&](const char* a) {
                      return std::strcmp(a, c.name) == 0;
                    }) == argv + argc) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = v.pass && in_time;
    std::printf("%s %-22s %.1fs/%.0fs %s%s\n", pass ? "PASS" : "FAIL", c.name, secs, c.budget_s,
                v.detail.c_str(), in_time ? "" : " (over time budget)");
    std::fflush(stdout);
    failed += !pass;
    ++ran;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
