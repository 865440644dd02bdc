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

#include "run_config.h"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lpnas::cli {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string Bad(const std::string& what, const std::string& value) {
  return "bad value '" + value + "': expected " + what;
}

int ToInt(const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument(Bad("an integer", v));
  return out;
}

std::uint64_t ToU64(const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument(Bad("an unsigned integer", v));
  return out;
}

double ToDouble(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw InvalidArgument(Bad("a number", v));
  return out;
}

bool ToBool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument(Bad("true or false", v));
}

std::string D(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string I(long long v) { return std::to_string(v); }
std::string B(bool v) { return v ? "true" : "false"; }

BlockKind ToKind(const std::string& name) {
  for (BlockKind k : kAllBlockKinds) {
    if (name == BlockKindName(k)) return k;
  }
  throw InvalidArgument(Bad("a block kind name such as ConvAct", name));
}

#define LPNAS_INT(KEY, GROUP, FIELD, HELP)                                                 \
  ConfigKey {                                                                               \
    KEY, GROUP, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = ToInt(v); },      \
        [](const RunConfig& c) { return I(c.FIELD); }                                      \
  }
#define LPNAS_DBL(KEY, GROUP, FIELD, HELP)                                                 \
  ConfigKey {                                                                               \
    KEY, GROUP, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = ToDouble(v); },   \
        [](const RunConfig& c) { return D(c.FIELD); }                                      \
  }
#define LPNAS_BOOL(KEY, GROUP, FIELD, HELP)                                                \
  ConfigKey {                                                                               \
    KEY, GROUP, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = ToBool(v); },     \
        [](const RunConfig& c) { return B(c.FIELD); }                                      \
  }
#define LPNAS_U64(KEY, GROUP, FIELD, HELP)                                                 \
  ConfigKey {                                                                               \
    KEY, GROUP, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = ToU64(v); },      \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                         \
  }

std::vector<ConfigKey> BuildKeys() {
  using G = Group;
  std::vector<ConfigKey> k = {
      LPNAS_INT("image_size", G::kData, data.image_size, "image side: 16, 32 or 64"),
      LPNAS_INT("n_train", G::kData, data.n_train, "training samples"),
      LPNAS_INT("n_eval", G::kData, data.n_eval, "evaluation samples"),
      LPNAS_INT("min_vessels", G::kData, data.min_vessels, "fewest vessels per image"),
      LPNAS_INT("max_vessels", G::kData, data.max_vessels, "most vessels per image"),
      LPNAS_DBL("min_aspect", G::kData, data.min_aspect, "smallest vessel aspect ratio"),
      LPNAS_DBL("max_aspect", G::kData, data.max_aspect, "largest vessel aspect ratio"),
      LPNAS_DBL("noise_sigma", G::kData, data.noise_sigma, "pixel noise std"),
      LPNAS_DBL("empty_fraction", G::kData, data.empty_fraction,
                "vessel-free frame probability when min_vessels is 0"),
      LPNAS_U64("data_seed", G::kData, data.seed, "generator seed"),

      LPNAS_INT("population_size", G::kGa, ga.population_size, "P_s"),
      LPNAS_INT("generations", G::kGa, ga.generations, "G"),
      LPNAS_INT("k_best", G::kGa, ga.k_best, "elites per generation"),
      LPNAS_INT("n_random", G::kGa, ga.n_random, "fresh samples per generation"),
      LPNAS_DBL("p_mut", G::kGa, ga.p_mut, "per-token mutation probability"),
      LPNAS_DBL("mating_fraction", G::kGa, ga.mating_fraction, "mating pool fraction"),
      LPNAS_U64("seed", G::kGa, ga.seed, "run seed"),

      LPNAS_DBL("alpha", G::kFitness, fitness.alpha, "fitness fps weight"),
      LPNAS_DBL("beta", G::kFitness, fitness.beta, "fitness metric weight"),
      LPNAS_DBL("gamma", G::kFitness, fitness.gamma, "fitness metric exponent"),

      LPNAS_INT("e_fp32", G::kTrain, train.e_fp32, "FP32 epochs"),
      LPNAS_INT("e_lp", G::kTrain, train.e_lp, "FP16-aware epochs after warmup"),
      ConfigKey{"warmup_epochs", G::kTrain, "warmup epochs (learning-rate ramp)",
                [](RunConfig& c, const std::string& v) {
                  c.train.warmup_epochs = ToInt(v);
                  c.precision.warmup_epochs = c.train.warmup_epochs;
                },
                [](const RunConfig& c) { return I(c.train.warmup_epochs); }},
      LPNAS_INT("batch_size", G::kTrain, train.batch_size, "minibatch size"),
      LPNAS_DBL("learning_rate", G::kTrain, train.learning_rate, "learning rate"),
      ConfigKey{"optimizer", G::kTrain, "adam or sgd",
                [](RunConfig& c, const std::string& v) {
                  if (v == "adam") {
                    c.train.optimizer = Optimizer::kAdam;
                  } else if (v == "sgd") {
                    c.train.optimizer = Optimizer::kSgd;
                  } else {
                    throw InvalidArgument(Bad("adam or sgd", v));
                  }
                },
                [](const RunConfig& c) {
                  return std::string(c.train.optimizer == Optimizer::kAdam ? "adam" : "sgd");
                }},

      LPNAS_BOOL("project_activations", G::kPrecision, precision.project_activations,
                 "FP16 projection at conv outputs during fine-tuning"),
      LPNAS_BOOL("round_weights", G::kPrecision, precision.round_weights,
                 "FP16 weight rounding during fine-tuning"),
      LPNAS_DBL("clip_bound", G::kPrecision, precision.clip_bound, "activation clip bound"),
      ConfigKey{"overflow_policy", G::kPrecision, "saturate or infinity",
                [](RunConfig& c, const std::string& v) {
                  if (v == "saturate") {
                    c.precision.overflow_policy = OverflowPolicy::kSaturate;
                  } else if (v == "infinity") {
                    c.precision.overflow_policy = OverflowPolicy::kInfinity;
                  } else {
                    throw InvalidArgument(Bad("saturate or infinity", v));
                  }
                },
                [](const RunConfig& c) {
                  return std::string(c.precision.overflow_policy == OverflowPolicy::kSaturate
                                         ? "saturate"
                                         : "infinity");
                }},

      LPNAS_INT("max_blocks", G::kSpace, space.max_blocks, "most learnable blocks"),
      LPNAS_INT("max_pools", G::kSpace, space.max_pools, "most pooling tokens"),
      ConfigKey{"param_cap", G::kSpace, "hard parameter-count cap, 0 for none",
                [](RunConfig& c, const std::string& v) {
                  const std::uint64_t cap = ToU64(v);
                  if (cap == 0) {
                    c.space.param_cap.reset();
                  } else {
                    c.space.param_cap = static_cast<std::int64_t>(cap);
                  }
                },
                [](const RunConfig& c) {
                  return c.space.param_cap ? I(*c.space.param_cap) : std::string("0");
                }},
      LPNAS_DBL("pool_probability", G::kSpace, space.pool_probability,
                "pool token probability after a block"),
      LPNAS_DBL("dropout_probability", G::kSpace, space.dropout_probability,
                "dropout token probability after a block"),
      ConfigKey{"allowed_kinds", G::kSpace, "comma-separated block kinds",
                [](RunConfig& c, const std::string& v) {
                  std::vector<BlockKind> kinds;
                  std::stringstream ss(v);
                  std::string item;
                  while (std::getline(ss, item, ',')) kinds.push_back(ToKind(Trim(item)));
                  if (kinds.empty()) throw InvalidArgument(Bad("at least one block kind", v));
                  c.space.allowed_kinds = std::move(kinds);
                },
                [](const RunConfig& c) {
                  std::string out;
                  for (BlockKind k : c.space.allowed_kinds) {
                    if (!out.empty()) out += ',';
                    out += BlockKindName(k);
                  }
                  return out;
                }},

      ConfigKey{"device_profile", G::kDevice, "device profile file, empty for the default",
                [](RunConfig& c, const std::string& v) { c.device_profile = v; },
                [](const RunConfig& c) { return c.device_profile; }},
      ConfigKey{"branch", G::kBranch, "ptq, aligned or both",
                [](RunConfig& c, const std::string& v) {
                  if (v != "ptq" && v != "aligned" && v != "both") {
                    throw InvalidArgument(Bad("ptq, aligned or both", v));
                  }
                  c.branch = v;
                },
                [](const RunConfig& c) { return c.branch; }},
  };
  return k;
}

#undef LPNAS_INT
#undef LPNAS_DBL
#undef LPNAS_BOOL
#undef LPNAS_U64

}  // namespace

const std::vector<ConfigKey>& ConfigKeys() {
  static const std::vector<ConfigKey> keys = BuildKeys();
  return keys;
}

const ConfigKey* FindKey(const std::string& key) {
  for (const auto& k : ConfigKeys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

std::map<std::string, std::string> ReadKeyValueFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) +
                            ": expected key=value");
    }
    out[Trim(line.substr(0, eq))] = Trim(line.substr(eq + 1));
  }
  return out;
}

void ApplyValue(RunConfig& config, const std::string& key, const std::string& value) {
  const ConfigKey* k = FindKey(key);
  if (!k) throw InvalidArgument("unknown config key '" + key + "'");
  try {
    k->set(config, value);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(key + ": " + e.what());
  }
}

std::string RenderManifest(const RunConfig& config, const std::vector<Group>& groups) {
  std::string out;
  for (const auto& k : ConfigKeys()) {
    for (Group g : groups) {
      if (g == k.group) {
        out += k.key + "=" + k.get(config) + "\n";
        break;
      }
    }
  }
  return out;
}

}  // namespace lpnas::cli
