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

#include "cli.h"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "lpnas/report.h"
#include "lpnas/wrap.h"
#include "run_config.h"

namespace lpnas::cli {

namespace fs = std::filesystem;

namespace {

// Holds <dir>/.lock for the lifetime of one command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw IoError("run directory " + dir.string() + " is locked by another process (" +
                    path_.string() + "; remove it if no run is active)");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

void WriteAtomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string Dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

// Flags for a set of config keys plus --config; resolved after parsing.
class KeyFlags {
 public:
  void Add(CLI::App* app, const std::vector<Group>& groups,
           const std::vector<std::string>& extra = {}) {
    app->add_option("--config", config_file_, "key=value config file (flags take precedence)");
    for (const auto& k : ConfigKeys()) {
      bool wanted = false;
      for (Group g : groups) wanted = wanted || g == k.group;
      for (const auto& e : extra) wanted = wanted || e == k.key;
      if (!wanted) continue;
      CLI::Option* opt = app->add_option(Dashed(k.key), values_[k.key], k.help);
      options_.emplace_back(k.key, opt);
    }
  }

  // Defaults, then the config file, then explicit flags.
  RunConfig Resolve() const {
    RunConfig cfg;
    if (!config_file_.empty()) {
      for (const auto& [key, value] : ReadKeyValueFile(config_file_)) {
        ApplyValue(cfg, key, value);
      }
    }
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) ApplyValue(cfg, key, values_.at(key));
    }
    return cfg;
  }

 private:
  std::string config_file_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

std::string DatasetFingerprint(const Dataset& train, const Dataset& eval) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Dataset* d : {&train, &eval}) {
    for (const Sample& s : d->samples) {
      mix(s.image.data(), s.image.size() * sizeof(float));
      mix(s.mask.data(), s.mask.size());
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

// A split directory (with index.txt) or a gen-data root (with eval/).
Dataset LoadSplit(const fs::path& dir, const char* fallback) {
  if (fs::exists(dir / "index.txt")) return load_dataset_dir(dir);
  return load_dataset_dir(dir / fallback);
}

DeviceProfile ProfileOf(const RunConfig& cfg) {
  return cfg.device_profile.empty() ? DeviceProfile{} : load_device_profile(cfg.device_profile);
}

void PrintMeasurement(std::ostream& out, const char* branch, const Candidate& c) {
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "branch=%s params=%lld macs=%lld fps=%.4f latency_ms=%.6f gpu_miou=%.6f "
                "device_miou=%.6f fitness=%.6f",
                branch, static_cast<long long>(c.params), static_cast<long long>(c.macs),
                c.measurement.fps, c.measurement.latency_ms, c.gpu_miou,
                c.measurement.miou_device, c.fitness);
  out << buf << '\n';
}

// ---- gen-data ----

struct GenDataArgs {
  KeyFlags keys;
  std::string out;
  std::optional<std::string> seed;  // --seed, applied last
};

int CmdGenData(const GenDataArgs& a, std::ostream& out) {
  RunConfig cfg = a.keys.Resolve();
  if (a.seed) ApplyValue(cfg, "data_seed", *a.seed);
  cfg.data.Validate();
  const fs::path root(a.out);
  RunLock lock(root);
  auto [train, eval] = generate_synthetic(cfg.data);
  for (const char* split : {"train", "eval"}) {
    if (fs::exists(root / split / "index.txt")) fs::remove_all(root / split);
  }
  save_dataset_dir(root / "train", train);
  save_dataset_dir(root / "eval", eval);
  WriteAtomic(root / "manifest.txt",
              "# lpnas gen-data\n" + RenderManifest(cfg, {Group::kData}));
  out << "wrote " << train.size() << " train and " << eval.size() << " eval samples to "
      << root.string() << '\n';
  return kOk;
}

// ---- search ----

struct SearchArgs {
  KeyFlags keys;
  std::string data;
  std::string out;
  int threads = 0;
};

void RunBranch(const fs::path& dir, const SearchConfig& sc, const std::string& manifest,
               const Dataset& train, const Dataset& eval, std::ostream& out) {
  fs::create_directories(dir / "state");
  std::vector<GenerationLog> resume;
  if (fs::exists(dir / "history.csv")) {
    if (!fs::exists(dir / "manifest.txt") || ReadFile(dir / "manifest.txt") != manifest) {
      throw IoError("run directory " + dir.string() +
                    " holds a run with a different configuration");
    }
    std::ifstream in(dir / "history.csv");
    resume = ReadHistoryCsv(in);
    if (static_cast<int>(resume.size()) > sc.ga.generations) {
      throw IoError("history in " + dir.string() + " is longer than the configured run");
    }
    out << "resuming " << dir.string() << " after " << resume.size() << " generation(s)\n";
  }
  WriteAtomic(dir / "manifest.txt", manifest);
  const std::uint64_t hash = Fnv1a64(manifest);
  std::vector<GenerationLog> history = resume;
  auto on_generation = [&](const GenerationLog& log) {
    history.push_back(log);
    std::ostringstream csv;
    WriteHistoryCsv(csv, history, sc.branch);
    const Candidate top = rank(log.rows).front();
    if (top.weights) save_checkpoint(dir / "state" / "top.ckpt", *top.weights, hash);
    WriteAtomic(dir / "history.csv", csv.str());
    out << BranchName(sc.branch) << " gen " << log.generation << " max_fitness "
        << log.max_fitness << " median_fitness " << log.median_fitness << '\n';
  };
  SearchResult result = run_search(sc, train, eval, resume, on_generation);
  {
    std::ostringstream csv;
    WriteHistoryCsv(csv, result.history, sc.branch);
    WriteAtomic(dir / "history.csv", csv.str());
  }
  const Candidate& best = result.best;
  if (best.weights) {
    save_checkpoint(dir / "best.ckpt", *best.weights, hash);
  } else {
    const Checkpoint top = load_checkpoint(dir / "state" / "top.ckpt");
    if (top.genotype != best.code()) {
      throw IoError("cannot recover weights of the best candidate from " +
                    (dir / "state" / "top.ckpt").string());
    }
    fs::copy_file(dir / "state" / "top.ckpt", dir / "best.ckpt",
                  fs::copy_options::overwrite_existing);
  }
  WriteAtomic(dir / "best_genotype.txt", best.code() + "\n");
  PrintMeasurement(out, BranchName(sc.branch), best);
}

int CmdSearch(const SearchArgs& a, std::ostream& out) {
  RunConfig cfg = a.keys.Resolve();
  SearchConfig sc;
  sc.ga = cfg.ga;
  sc.fitness = cfg.fitness;
  sc.train = cfg.train;
  sc.precision = cfg.precision;
  sc.space = cfg.space;
  sc.threads = a.threads;
  sc.ga.Validate();
  sc.fitness.Validate();
  sc.train.Validate();
  sc.precision.Validate();
  sc.space.Validate();
  sc.profile = ProfileOf(cfg);
  const fs::path data(a.data);
  const Dataset train = load_dataset_dir(data / "train");
  const Dataset eval = load_dataset_dir(data / "eval");
  if (train.empty() || eval.empty()) throw IoError("dataset " + data.string() + " is empty");
  const fs::path root(a.out);
  RunLock lock(root);
  const std::vector<Group> all = {Group::kGa,    Group::kFitness, Group::kTrain,
                                  Group::kPrecision, Group::kSpace, Group::kDevice};
  const std::string header = "# lpnas search\n# dataset_fnv1a=" +
                             DatasetFingerprint(train, eval) + "\n";
  std::vector<Branch> branches;
  if (cfg.branch == "both") {
    branches = {Branch::kPtq, Branch::kAligned};
    RunConfig top = cfg;
    WriteAtomic(root / "manifest.txt",
                header + RenderManifest(top, all) + "branch=both\n");
  } else {
    branches = {ParseBranch(cfg.branch)};
  }
  for (Branch b : branches) {
    sc.branch = b;
    RunConfig bc = cfg;
    bc.branch = BranchName(b);
    const std::string manifest = header + RenderManifest(bc, all) + "branch=" + bc.branch + "\n";
    const fs::path dir = branches.size() == 2 ? root / BranchName(b) : root;
    RunBranch(dir, sc, manifest, train, eval, out);
  }
  return kOk;
}

// ---- train ----

struct TrainArgs {
  KeyFlags keys;
  std::string genotype;
  std::string data;
  std::string out;
  bool finetune = false;
};

int CmdTrain(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.keys.Resolve();
  cfg.train.Validate();
  cfg.precision.Validate();
  const DeviceProfile profile = ProfileOf(cfg);
  Genotype g;
  try {
    g = parse(a.genotype, cfg.space);
  } catch (const SyntaxError& e) {
    err << "  " << a.genotype << "\n  " << std::string(e.position(), ' ') << "^\n";
    throw;
  }
  const fs::path data(a.data);
  const Dataset train = load_dataset_dir(data / "train");
  const Dataset eval = load_dataset_dir(data / "eval");
  SearchConfig sc;
  sc.train = cfg.train;
  sc.precision = cfg.precision;
  sc.space = cfg.space;
  sc.profile = profile;
  sc.branch = Branch::kPtq;
  Candidate c;
  c.genotype = g;
  c.seed = cfg.ga.seed;
  EvaluateCandidate(c, sc, train, eval);
  if (c.diverged) throw DivergenceError(-1, -1, 0);
  PrintMeasurement(out, "ptq", c);
  Network<float>& net = *c.weights;
  if (a.finetune) {
    TrainConfig tc = cfg.train;
    tc.seed = c.seed;
    finetune_fp16_aware(net, train, tc, cfg.precision);
    c.measurement = measure(net, eval, profile);
    c.fitness = fitness(c.measurement.fps, c.measurement.miou_device, cfg.fitness);
    PrintMeasurement(out, "aligned", c);
  }
  if (!a.out.empty()) {
    const std::string manifest =
        RenderManifest(cfg, {Group::kTrain, Group::kPrecision}) + "seed=" +
        std::to_string(cfg.ga.seed) + "\nfinetune=" + (a.finetune ? "true" : "false") + "\n";
    save_checkpoint(a.out, net, Fnv1a64(manifest));
    out << "checkpoint " << a.out << '\n';
  }
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  KeyFlags keys;
  std::string checkpoint;
  std::string data;
  std::string mode = "both";
};

int CmdEval(const EvalArgs& a, std::ostream& out) {
  RunConfig cfg = a.keys.Resolve();
  if (a.mode != "fp32" && a.mode != "deploy" && a.mode != "both") {
    throw InvalidArgument("--mode must be fp32, deploy or both");
  }
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  Network<float> net = restore_network(ck);
  const Dataset eval = LoadSplit(a.data, "eval");
  char buf[200];
  if (a.mode != "deploy") {
    std::snprintf(buf, sizeof(buf), "gpu_miou=%.6f", evaluate(net, eval, EvalMode::kFp32));
    out << buf << '\n';
  }
  if (a.mode != "fp32") {
    const Measurement m = measure(net, eval, ProfileOf(cfg));
    std::snprintf(buf, sizeof(buf), "device_miou=%.6f fps=%.4f latency_ms=%.6f params=%lld",
                  m.miou_device, m.fps, m.latency_ms, static_cast<long long>(m.param_count));
    out << buf << '\n';
  }
  return kOk;
}

// ---- report ----

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int CmdReport(const ReportArgs& a, std::ostream& out) {
  std::vector<RunHistory> runs;
  for (const auto& r : a.runs) {
    const fs::path dir(r);
    if (!fs::exists(dir / "history.csv") && fs::exists(dir / "ptq" / "history.csv") &&
        fs::exists(dir / "aligned" / "history.csv")) {
      runs.push_back(LoadRunHistory(dir / "ptq"));
      runs.push_back(LoadRunHistory(dir / "aligned"));
    } else {
      runs.push_back(LoadRunHistory(dir));
    }
  }
  const fs::path dest(a.out);
  RunLock lock(dest);
  for (const auto& f : write_report(runs, dest)) out << (dest / f).string() << '\n';
  return kOk;
}

// ---- export-genotype ----

struct ExportArgs {
  std::string run;
  std::string checkpoint;
  std::string genotype;
  std::string out;
};

int CmdExport(const ExportArgs& a, std::ostream& out) {
  const int given = !a.run.empty() + !a.checkpoint.empty() + !a.genotype.empty();
  if (given != 1) {
    throw InvalidArgument("export-genotype takes exactly one of --run, --checkpoint, --genotype");
  }
  std::string code;
  if (!a.checkpoint.empty()) {
    code = load_checkpoint(a.checkpoint).genotype;
  } else if (!a.genotype.empty()) {
    code = serialize(parse_syntax(a.genotype));
  } else {
    const fs::path dir(a.run);
    if (fs::exists(dir / "best_genotype.txt")) {
      std::istringstream in(ReadFile(dir / "best_genotype.txt"));
      std::getline(in, code);
    } else {
      const RunHistory h = LoadRunHistory(dir);
      code = rank(h.history.back().rows).front().code();
    }
  }
  code = serialize(parse_syntax(code));
  if (!a.out.empty()) WriteAtomic(a.out, code + "\n");
  out << code << '\n';
  return kOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"lpnas: hardware-aware architecture search with FP16-aware fine-tuning"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic vessel dataset");
  gen.keys.Add(gen_cmd, {Group::kData});
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  std::string gen_seed;
  auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "alias of --data-seed");

  SearchArgs search;
  auto* search_cmd = app.add_subcommand("search", "run the evolutionary search");
  search.keys.Add(search_cmd, {Group::kGa, Group::kFitness, Group::kTrain, Group::kPrecision,
                               Group::kSpace, Group::kDevice, Group::kBranch});
  search_cmd->add_option("--data", search.data, "dataset root (train/ and eval/)")->required();
  search_cmd->add_option("--out", search.out, "run directory")->required();
  search_cmd->add_option("--threads", search.threads, "worker threads (default LPNAS_THREADS)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train and measure one genotype");
  train.keys.Add(train_cmd, {Group::kTrain, Group::kPrecision, Group::kDevice, Group::kSpace,
                             Group::kFitness},
                 {"seed"});
  train_cmd->add_option("--genotype", train.genotype, "architecture code")->required();
  train_cmd->add_option("--data", train.data, "dataset root (train/ and eval/)")->required();
  train_cmd->add_option("--out", train.out, "checkpoint path");
  train_cmd->add_flag("--finetune", train.finetune, "also run FP16-aware fine-tuning");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval.keys.Add(eval_cmd, {Group::kDevice});
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "dataset root or split directory")->required();
  eval_cmd->add_option("--mode", eval.mode, "fp32, deploy or both");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "CSV summaries and SVG plots");
  report_cmd->add_option("--runs", report.runs, "run directories")->required();
  report_cmd->add_option("--out", report.out, "report directory")->required();

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-genotype", "print a canonical genotype string");
  exp_cmd->add_option("--run", exp.run, "run directory (best candidate)");
  exp_cmd->add_option("--checkpoint", exp.checkpoint, "checkpoint file");
  exp_cmd->add_option("--genotype", exp.genotype, "genotype to canonicalise");
  exp_cmd->add_option("--out", exp.out, "also write to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) {
      if (gen_seed_opt->count() > 0) gen.seed = gen_seed;
      return CmdGenData(gen, out);
    }
    if (*search_cmd) return CmdSearch(search, out);
    if (*train_cmd) return CmdTrain(train, out, err);
    if (*eval_cmd) return CmdEval(eval, out);
    if (*report_cmd) return CmdReport(report, out);
    if (*exp_cmd) return CmdExport(exp, out);
  } catch (const DivergenceError& e) {
    err << "error: divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInput;
  }
  return kUsage;
}

}  // namespace lpnas::cli
