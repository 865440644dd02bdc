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

#ifndef LPNAS_SEARCH_H_
#define LPNAS_SEARCH_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpnas/blocks.h"
#include "lpnas/data.h"
#include "lpnas/device.h"
#include "lpnas/genotype.h"
#include "lpnas/precision.h"
#include "lpnas/rng.h"
#include "lpnas/trainer.h"

namespace lpnas {

struct GaConfig {
  int population_size = 16;
  int generations = 10;
  int k_best = 1;
  int n_random = 6;
  double p_mut = 0.15;
  double mating_fraction = 0.5;
  std::uint64_t seed = 0;

  int mating_pool_size() const;
  int offspring_count() const { return population_size - k_best - n_random; }
  // k_best + n_random <= population_size, mating pool >= 2 (when offspring
  // are needed), generations >= 1, p_mut in [0, 1].
  void Validate() const;
};

struct FitnessConfig {
  double alpha = 0.01;
  double beta = 1.0;
  double gamma = 2.0;
  void Validate() const;
};

// alpha·fps + beta·metric·exp(gamma·metric)
double fitness(double fps, double metric, const FitnessConfig& config);

enum class Branch { kPtq, kAligned };
const char* BranchName(Branch b);
Branch ParseBranch(const std::string& name);

struct Candidate {
  Genotype genotype;
  int generation = 0;
  int slot = 0;
  int parent_a = -1;  // slot in the previous generation, -1 if none
  int parent_b = -1;
  std::string op = "random";  // random | elite | offspring
  std::uint64_t seed = 0;  // HashSeed(run seed, generation, slot); trains non-elites

  std::int64_t params = 0;
  std::int64_t macs = 0;
  Measurement measurement;
  double gpu_miou = 0;  // FP32 eval of the FP32-trained weights
  double fitness = 0;
  bool diverged = false;
  bool evaluated = false;

  std::shared_ptr<Network<float>> weights;

  std::string code() const { return serialize(genotype); }
};

struct GenerationLog {
  int generation = 0;
  std::vector<Candidate> rows;  // slot order
  double max_fitness = 0;
  double median_fitness = 0;
  double max_gpu_miou = 0;
  double max_device_miou = 0;
  double max_fps = 0;
};

GenerationLog Summarize(int generation, std::vector<Candidate> rows);

// Descending fitness; ties by lower params, then genotype string.
std::vector<Candidate> rank(std::vector<Candidate> population);

// Next population in slot order: k_best elites (weights and measurements
// kept), n_random fresh samples, then offspring of uniformly drawn distinct
// parent pairs from the top mating_pool_size() (no pair twice in a row),
// each the first child of crossover followed by mutate.
std::vector<Candidate> evolve_generation(const std::vector<Candidate>& ranked,
                                         const GaConfig& ga, const SearchSpaceConfig& space,
                                         Rng& rng);

struct SearchConfig {
  GaConfig ga;
  FitnessConfig fitness;
  TrainConfig train;
  PrecisionConfig precision;
  SearchSpaceConfig space;
  DeviceProfile profile;
  Branch branch = Branch::kPtq;
  int threads = 0;  // 0: LPNAS_THREADS or hardware concurrency
};

struct SearchResult {
  std::vector<GenerationLog> history;
  Candidate best;
};

// Trains and measures one candidate in place. ptq: train_fp32 then deploy
// measurement; aligned: train_fp32, finetune_fp16_aware, then deploy
// measurement. Divergence yields fitness -inf.
void EvaluateCandidate(Candidate& c, const SearchConfig& config, const Dataset& train,
                       const Dataset& eval);

// Initialisation seed of a candidate's network weights.
std::uint64_t WeightSeed(std::uint64_t candidate_seed);

using GenerationCallback = std::function<void(const GenerationLog&)>;

// `resume` holds already-completed generations (with elite weights in the
// last one); the search continues after them and reproduces the same output
// an uninterrupted run would.
SearchResult run_search(const SearchConfig& config, const Dataset& train, const Dataset& eval,
                        const std::vector<GenerationLog>& resume = {},
                        const GenerationCallback& on_generation = {});

// Worker count: explicit value, else LPNAS_THREADS, else hardware threads.
int ResolveThreads(int requested);

// ---- history CSV ----

extern const char* const kHistoryHeader;
void WriteHistoryCsv(std::ostream& out, const std::vector<GenerationLog>& history,
                     Branch branch);
void AppendHistoryRows(std::ostream& out, const GenerationLog& log, Branch branch);
// Inverse of WriteHistoryCsv (weights are not restored).
std::vector<GenerationLog> ReadHistoryCsv(std::istream& in, Branch* branch = nullptr);

// ---- paired gap statistics ----

struct GapStats {
  int n_ptq = 0;
  int n_aligned = 0;
  double mean_gap_ptq = 0;
  double median_gap_ptq = 0;
  double mean_gap_aligned = 0;
  double median_gap_aligned = 0;
  // 1 - mean_gap_aligned / mean_gap_ptq; 0 when both means are 0.
  double recovered_fraction = 0;
  // Paired sign test over matched entries, ties dropped.
  int pairs = 0;
  int aligned_smaller = 0;
  int ties = 0;
  double sign_test_p = 1;  // one-sided P(X >= aligned_smaller), X ~ Bin(pairs - ties, 1/2)
};

double RecoveredFraction(double gap_ptq, double gap_aligned);
// One-sided binomial tail P(X >= k), X ~ Bin(n, 1/2).
double SignTestP(int k, int n);

// Gaps are gpu - device per entry; entries with equal index form the pairs
// (min of both lengths).
GapStats gap_statistics(std::span<const double> gaps_ptq, std::span<const double> gaps_aligned);

// Per-candidate gaps over all non-diverged rows of each history; pairs are
// rows with equal (generation, slot, genotype, seed). Throws InvalidArgument
// when the generation-0 seeds differ.
GapStats paired_gap_report(const std::vector<GenerationLog>& ptq,
                           const std::vector<GenerationLog>& aligned);

}  // namespace lpnas

#endif  // LPNAS_SEARCH_H_
