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

#include "lpnas/search.h"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace lpnas {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kInitTag = 0x1a17;
constexpr std::uint64_t kEvolveTag = 0xe401;
constexpr std::uint64_t kWeightTag = 0x1417;

template <typename Fn>
void ParallelFor(int n, int threads, Fn fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double Median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

double Mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string Num(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  out.push_back(std::move(field));
  return out;
}

}  // namespace

int GaConfig::mating_pool_size() const {
  return static_cast<int>(std::floor(population_size * mating_fraction));
}

void GaConfig::Validate() const {
  if (population_size < 1) throw InvalidArgument("population_size must be >= 1");
  if (generations < 1) throw InvalidArgument("generations must be >= 1");
  if (k_best < 0 || n_random < 0) throw InvalidArgument("k_best and n_random must be >= 0");
  if (k_best + n_random > population_size) {
    throw InvalidArgument("k_best + n_random must not exceed population_size");
  }
  if (!(p_mut >= 0.0 && p_mut <= 1.0)) throw InvalidArgument("p_mut must lie in [0, 1]");
  if (!(mating_fraction > 0.0 && mating_fraction <= 1.0)) {
    throw InvalidArgument("mating_fraction must lie in (0, 1]");
  }
  if (offspring_count() > 0 && mating_pool_size() < 2) {
    throw InvalidArgument("mating pool must hold at least 2 candidates");
  }
}

void FitnessConfig::Validate() const {
  if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) {
    throw InvalidArgument("fitness coefficients must be >= 0");
  }
  if (alpha == 0 && beta == 0) throw InvalidArgument("alpha and beta must not both be 0");
}

double fitness(double fps, double metric, const FitnessConfig& c) {
  return c.alpha * fps + c.beta * metric * std::exp(c.gamma * metric);
}

const char* BranchName(Branch b) { return b == Branch::kPtq ? "ptq" : "aligned"; }

Branch ParseBranch(const std::string& name) {
  if (name == "ptq") return Branch::kPtq;
  if (name == "aligned") return Branch::kAligned;
  throw InvalidArgument("unknown branch '" + name + "' (expected ptq or aligned)");
}

GenerationLog Summarize(int generation, std::vector<Candidate> rows) {
  GenerationLog log;
  log.generation = generation;
  log.rows = std::move(rows);
  std::vector<double> fit;
  log.max_fitness = kNegInf;
  for (const Candidate& c : log.rows) {
    fit.push_back(c.fitness);
    log.max_fitness = std::max(log.max_fitness, c.fitness);
    if (c.diverged) continue;
    log.max_gpu_miou = std::max(log.max_gpu_miou, c.gpu_miou);
    log.max_device_miou = std::max(log.max_device_miou, c.measurement.miou_device);
    log.max_fps = std::max(log.max_fps, c.measurement.fps);
  }
  log.median_fitness = Median(std::move(fit));
  return log;
}

std::vector<Candidate> rank(std::vector<Candidate> population) {
  std::vector<std::pair<std::string, std::size_t>> keys;
  for (std::size_t i = 0; i < population.size(); ++i) keys.emplace_back(population[i].code(), i);
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    const Candidate& x = population[a.second];
    const Candidate& y = population[b.second];
    if (x.fitness != y.fitness) return x.fitness > y.fitness;
    if (x.params != y.params) return x.params < y.params;
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  std::vector<Candidate> out;
  out.reserve(population.size());
  for (const auto& k : keys) out.push_back(std::move(population[k.second]));
  return out;
}

std::vector<Candidate> evolve_generation(const std::vector<Candidate>& ranked,
                                         const GaConfig& ga, const SearchSpaceConfig& space,
                                         Rng& rng) {
  ga.Validate();
  if (static_cast<int>(ranked.size()) != ga.population_size) {
    throw InvalidArgument("evolve_generation: population has " +
                          std::to_string(ranked.size()) + " candidates, expected " +
                          std::to_string(ga.population_size));
  }
  const int next_gen = ranked.empty() ? 1 : ranked.front().generation + 1;
  std::vector<Candidate> next;
  for (int i = 0; i < ga.k_best; ++i) {
    Candidate e = ranked[i];
    e.parent_a = e.slot;
    e.parent_b = -1;
    e.op = "elite";
    next.push_back(std::move(e));
  }
  for (int i = 0; i < ga.n_random; ++i) {
    Candidate c;
    c.genotype = sample_random(space, rng);
    c.op = "random";
    next.push_back(std::move(c));
  }
  const int pool = std::min<int>(ga.mating_pool_size(), static_cast<int>(ranked.size()));
  int last_a = -1, last_b = -1;
  for (int i = 0; i < ga.offspring_count(); ++i) {
    int a, b;
    for (;;) {
      a = static_cast<int>(rng.Below(pool));
      b = static_cast<int>(rng.Below(pool - 1));
      if (b >= a) ++b;
      const bool repeat = (a == last_a && b == last_b) || (a == last_b && b == last_a);
      if (!repeat || pool == 2) break;
    }
    last_a = a;
    last_b = b;
    auto children = crossover(ranked[a].genotype, ranked[b].genotype, rng, space);
    Candidate c;
    c.genotype = mutate(children.first, ga.p_mut, rng, space);
    c.parent_a = ranked[a].slot;
    c.parent_b = ranked[b].slot;
    c.op = "offspring";
    next.push_back(std::move(c));
  }
  for (int s = 0; s < static_cast<int>(next.size()); ++s) {
    Candidate& c = next[s];
    c.slot = s;
    c.generation = next_gen;
    // Elites keep their weights; the seed column still names the slot so
    // paired branches share it row for row.
    c.seed = HashSeed({ga.seed, static_cast<std::uint64_t>(next_gen),
                       static_cast<std::uint64_t>(s)});
    if (c.op == "elite") continue;
    c.evaluated = false;
    c.weights.reset();
  }
  return next;
}

void EvaluateCandidate(Candidate& c, const SearchConfig& config, const Dataset& train,
                       const Dataset& eval) {
  if (eval.empty() || train.empty()) throw InvalidArgument("EvaluateCandidate: empty data");
  Shape in = eval.samples[0].image.shape();
  in.n = 1;
  auto net = std::make_shared<Network<float>>(
      Network<float>::Build(c.genotype.tokens, config.space.in_channels,
                            config.space.num_classes, WeightSeed(c.seed)));
  c.params = param_count(*net);
  c.macs = mac_count(*net, in);
  TrainConfig tc = config.train;
  tc.seed = c.seed;
  try {
    train_fp32(*net, train, tc);
    c.gpu_miou = evaluate(*net, eval, EvalMode::kFp32);
    if (config.branch == Branch::kAligned) {
      finetune_fp16_aware(*net, train, tc, config.precision);
    }
    c.measurement = measure(*net, eval, config.profile);
    c.fitness = fitness(c.measurement.fps, c.measurement.miou_device, config.fitness);
    c.diverged = false;
  } catch (const DivergenceError&) {
    c.diverged = true;
    c.gpu_miou = 0;
    c.measurement.latency_ms = estimate_latency(*net, in, config.profile);
    c.measurement.fps = 1000.0 / c.measurement.latency_ms;
    c.measurement.miou_device = 0;
    c.measurement.param_count = c.params;
    c.fitness = kNegInf;
  }
  c.weights = std::move(net);
  c.evaluated = true;
}

std::uint64_t WeightSeed(std::uint64_t candidate_seed) {
  return HashSeed({candidate_seed, kWeightTag});
}

int ResolveThreads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LPNAS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SearchResult run_search(const SearchConfig& config, const Dataset& train, const Dataset& eval,
                        const std::vector<GenerationLog>& resume,
                        const GenerationCallback& on_generation) {
  const GaConfig& ga = config.ga;
  ga.Validate();
  config.fitness.Validate();
  config.train.Validate();
  config.precision.Validate();
  config.space.Validate();
  config.profile.Validate();
  if (train.empty() || eval.empty()) throw InvalidArgument("run_search: empty dataset");
  if (static_cast<int>(resume.size()) > ga.generations) {
    throw InvalidArgument("run_search: resume state has more generations than configured");
  }
  const int threads = ResolveThreads(config.threads);

  auto evaluate_all = [&](std::vector<Candidate>& pop) {
    std::vector<int> todo;
    for (int i = 0; i < static_cast<int>(pop.size()); ++i) {
      if (!pop[i].evaluated) todo.push_back(i);
    }
    ParallelFor(static_cast<int>(todo.size()), threads,
                [&](int k) { EvaluateCandidate(pop[todo[k]], config, train, eval); });
  };

  SearchResult result;
  result.history = resume;
  if (result.history.empty()) {
    Rng init(HashSeed({ga.seed, 0, kInitTag}));
    std::vector<Candidate> pop(ga.population_size);
    for (int s = 0; s < ga.population_size; ++s) {
      pop[s].genotype = sample_random(config.space, init);
      pop[s].slot = s;
      pop[s].generation = 0;
      pop[s].op = "random";
      pop[s].seed = HashSeed({ga.seed, 0, static_cast<std::uint64_t>(s)});
    }
    evaluate_all(pop);
    result.history.push_back(Summarize(0, std::move(pop)));
    if (on_generation) on_generation(result.history.back());
  }
  for (int gen = static_cast<int>(result.history.size()); gen < ga.generations; ++gen) {
    const auto ranked = rank(result.history.back().rows);
    Rng erng(HashSeed({ga.seed, static_cast<std::uint64_t>(gen), kEvolveTag}));
    std::vector<Candidate> pop = evolve_generation(ranked, ga, config.space, erng);
    evaluate_all(pop);
    for (Candidate& c : result.history.back().rows) c.weights.reset();
    result.history.push_back(Summarize(gen, std::move(pop)));
    if (on_generation) on_generation(result.history.back());
  }
  result.best = rank(result.history.back().rows).front();
  return result;
}

// ---- CSV ----

const char* const kHistoryHeader =
    "gen,slot,branch,genotype,params,macs,fps,latency_ms,gpu_miou,device_miou,fitness,"
    "parent_a,parent_b,operator,seed";

void AppendHistoryRows(std::ostream& out, const GenerationLog& log, Branch branch) {
  for (const Candidate& c : log.rows) {
    out << log.generation << ',' << c.slot << ',' << BranchName(branch) << ",\"" << c.code()
        << "\"," << c.params << ',' << c.macs << ',' << Num(c.measurement.fps) << ','
        << Num(c.measurement.latency_ms) << ',' << Num(c.gpu_miou) << ','
        << Num(c.measurement.miou_device) << ',' << Num(c.fitness) << ',';
    if (c.parent_a >= 0) out << c.parent_a;
    out << ',';
    if (c.parent_b >= 0) out << c.parent_b;
    out << ',' << c.op << ',' << c.seed << '\n';
  }
}

void WriteHistoryCsv(std::ostream& out, const std::vector<GenerationLog>& history,
                     Branch branch) {
  out << kHistoryHeader << '\n';
  for (const auto& log : history) AppendHistoryRows(out, log, branch);
}

std::vector<GenerationLog> ReadHistoryCsv(std::istream& in, Branch* branch) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("history CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHistoryHeader) throw IoError("history CSV has an unexpected header");
  std::vector<std::vector<Candidate>> gens;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = SplitCsvLine(line);
    if (f.size() != 15) {
      throw IoError("history CSV line " + std::to_string(line_no) + ": expected 15 fields");
    }
    try {
      Candidate c;
      const int gen = std::stoi(f[0]);
      c.generation = gen;
      c.slot = std::stoi(f[1]);
      if (branch) *branch = ParseBranch(f[2]);
      c.genotype = parse_syntax(f[3]);
      c.params = std::stoll(f[4]);
      c.macs = std::stoll(f[5]);
      c.measurement.fps = std::strtod(f[6].c_str(), nullptr);
      c.measurement.latency_ms = std::strtod(f[7].c_str(), nullptr);
      c.gpu_miou = std::strtod(f[8].c_str(), nullptr);
      c.measurement.miou_device = std::strtod(f[9].c_str(), nullptr);
      c.measurement.param_count = c.params;
      c.fitness = std::strtod(f[10].c_str(), nullptr);
      c.diverged = std::isinf(c.fitness) && c.fitness < 0;
      c.parent_a = f[11].empty() ? -1 : std::stoi(f[11]);
      c.parent_b = f[12].empty() ? -1 : std::stoi(f[12]);
      c.op = f[13];
      c.seed = std::stoull(f[14]);
      c.evaluated = true;
      if (gen < 0) throw IoError("negative generation");
      if (static_cast<int>(gens.size()) <= gen) gens.resize(gen + 1);
      gens[gen].push_back(std::move(c));
    } catch (const std::logic_error&) {
      throw IoError("history CSV line " + std::to_string(line_no) + ": malformed number");
    } catch (const SyntaxError& e) {
      throw IoError("history CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<GenerationLog> history;
  for (int g = 0; g < static_cast<int>(gens.size()); ++g) {
    std::sort(gens[g].begin(), gens[g].end(),
              [](const Candidate& a, const Candidate& b) { return a.slot < b.slot; });
    history.push_back(Summarize(g, std::move(gens[g])));
  }
  return history;
}

// ---- gap statistics ----

double RecoveredFraction(double gap_ptq, double gap_aligned) {
  if (gap_ptq == 0.0) {
    return gap_aligned == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  }
  return 1.0 - gap_aligned / gap_ptq;
}

double SignTestP(int k, int n) {
  if (n <= 0 || k <= 0) return 1.0;
  if (k > n) return 0.0;
  double p = 0;
  for (int i = k; i <= n; ++i) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) -
                  n * std::log(2.0));
  }
  return std::min(1.0, p);
}

GapStats gap_statistics(std::span<const double> gaps_ptq, std::span<const double> gaps_aligned) {
  GapStats s;
  std::vector<double> p(gaps_ptq.begin(), gaps_ptq.end());
  std::vector<double> a(gaps_aligned.begin(), gaps_aligned.end());
  s.n_ptq = static_cast<int>(p.size());
  s.n_aligned = static_cast<int>(a.size());
  s.mean_gap_ptq = Mean(p);
  s.mean_gap_aligned = Mean(a);
  s.median_gap_ptq = Median(p);
  s.median_gap_aligned = Median(a);
  s.recovered_fraction = RecoveredFraction(s.mean_gap_ptq, s.mean_gap_aligned);
  s.pairs = static_cast<int>(std::min(p.size(), a.size()));
  for (int i = 0; i < s.pairs; ++i) {
    if (a[i] < p[i]) {
      ++s.aligned_smaller;
    } else if (a[i] == p[i]) {
      ++s.ties;
    }
  }
  s.sign_test_p = SignTestP(s.aligned_smaller, s.pairs - s.ties);
  return s;
}

GapStats paired_gap_report(const std::vector<GenerationLog>& ptq,
                           const std::vector<GenerationLog>& aligned) {
  if (ptq.empty() || aligned.empty()) throw InvalidArgument("paired_gap_report: empty history");
  auto seeds = [](const GenerationLog& g) {
    std::vector<std::uint64_t> s;
    for (const auto& c : g.rows) s.push_back(c.seed);
    return s;
  };
  if (seeds(ptq.front()) != seeds(aligned.front())) {
    throw InvalidArgument("paired_gap_report: histories were run with different seeds");
  }
  // Fresh evaluations only; elite rows repeat an earlier measurement.
  auto gaps = [](const std::vector<GenerationLog>& h) {
    std::vector<double> out;
    for (const auto& g : h) {
      for (const auto& c : g.rows) {
        if (!c.diverged && c.op != "elite") out.push_back(c.gpu_miou - c.measurement.miou_device);
      }
    }
    return out;
  };
  std::vector<double> gp = gaps(ptq), ga = gaps(aligned);
  GapStats s = gap_statistics(gp, {});
  const GapStats sa = gap_statistics(ga, {});
  s.n_aligned = sa.n_ptq;
  s.mean_gap_aligned = sa.mean_gap_ptq;
  s.median_gap_aligned = sa.median_gap_ptq;
  s.recovered_fraction = RecoveredFraction(s.mean_gap_ptq, s.mean_gap_aligned);
  std::vector<double> pp, pa;
  for (std::size_t g = 0; g < std::min(ptq.size(), aligned.size()); ++g) {
    for (const auto& x : ptq[g].rows) {
      if (x.diverged || x.op == "elite") continue;
      for (const auto& y : aligned[g].rows) {
        if (y.slot == x.slot && !y.diverged && y.op != "elite" && y.seed == x.seed &&
            y.genotype == x.genotype) {
          pp.push_back(x.gpu_miou - x.measurement.miou_device);
          pa.push_back(y.gpu_miou - y.measurement.miou_device);
        }
      }
    }
  }
  const GapStats paired = gap_statistics(pp, pa);
  s.pairs = paired.pairs;
  s.aligned_smaller = paired.aligned_smaller;
  s.ties = paired.ties;
  s.sign_test_p = paired.sign_test_p;
  return s;
}

}  // namespace lpnas
