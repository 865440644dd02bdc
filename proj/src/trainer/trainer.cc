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

#include "lpnas/trainer.h"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lpnas/genotype.h"
#include "lpnas/metrics.h"
#include "lpnas/rng.h"
#include "lpnas/tape.h"
#include "lpnas/wrap.h"

namespace lpnas {

namespace {

constexpr std::string_view kCkptTag = "LPNAS-CKPT";

// Adam or SGD with momentum; one state slot per parameter, keyed by order.
class Stepper {
 public:
  Stepper(const TrainConfig& cfg, std::vector<Parameter<float>*> params)
      : cfg_(cfg), params_(std::move(params)) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0f);
      if (cfg_.optimizer == Optimizer::kAdam) v_.emplace_back(p->value.size(), 0.0f);
    }
  }

  void Step(double lr) {
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      float* w = params_[i]->value.data();
      const float* g = params_[i]->grad.data();
      float* m = m_[i].data();
      const std::size_t n = params_[i]->value.size();
      if (cfg_.optimizer == Optimizer::kAdam) {
        float* v = v_[i].data();
        for (std::size_t k = 0; k < n; ++k) {
          m[k] = static_cast<float>(b1 * m[k] + (1 - b1) * g[k]);
          v[k] = static_cast<float>(b2 * v[k] + (1 - b2) * g[k] * g[k]);
          const double mh = m[k] / c1, vh = v[k] / c2;
          w[k] = static_cast<float>(w[k] - lr * mh / (std::sqrt(vh) + cfg_.adam_eps));
        }
      } else {
        for (std::size_t k = 0; k < n; ++k) {
          m[k] = static_cast<float>(cfg_.sgd_momentum * m[k] + g[k]);
          w[k] = static_cast<float>(w[k] - lr * m[k]);
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Parameter<float>*> params_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

// Runs `epochs` epochs; lr_at(step) gives the rate for the global step index.
template <typename LrFn>
void RunEpochs(Network<float>& net, const Dataset& train, const TrainConfig& cfg, int epochs,
               std::uint64_t stage, int epoch_offset, Stepper& stepper, LrFn lr_at,
               TrainLog& log) {
  const std::size_t n = train.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  Rng dropout_rng(HashSeed({cfg.seed, stage, 0xd409}));
  std::vector<std::size_t> order(n);
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(HashSeed({cfg.seed, stage, static_cast<std::uint64_t>(epoch_offset + e)}));
    shuffle.Shuffle(order.begin(), order.end());
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      auto [images, labels] =
          MakeBatch(train, std::span<const std::size_t>(order.data() + start, end - start));
      Tape<float> tape;
      ForwardContext<float> ctx;
      ctx.tape = &tape;
      ctx.mode = ExecMode::kTrain;
      ctx.dropout_rng = &dropout_rng;
      net.ZeroGrad();
      Var<float> logits = net.Forward(ctx, tape.Constant(images));
      Var<float> loss = segmentation_loss(logits, labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw DivergenceError(epoch_offset + e, batches, tape.MaxAbsValue());
      }
      tape.Backward(loss);
      const double lr = lr_at(static_cast<int>(log.step_lr.size()));
      stepper.Step(lr);
      log.step_lr.push_back(lr);
      loss_sum += value;
      ++batches;
    }
    log.epoch_loss.push_back(batches ? loss_sum / batches : 0.0);
  }
}

int StepsPerEpoch(const Dataset& d, int batch) {
  return static_cast<int>((d.size() + batch - 1) / batch);
}

}  // namespace

void TrainConfig::Validate() const {
  if (e_fp32 < 0 || e_lp < 0 || warmup_epochs < 0) {
    throw InvalidArgument("epoch counts must be >= 0");
  }
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be > 0");
  }
}

std::string TrainConfig::Canonical() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "e_fp32=%d;e_lp=%d;warmup_epochs=%d;batch_size=%d;learning_rate=%.17g;"
                "optimizer=%s;seed=%" PRIu64,
                e_fp32, e_lp, warmup_epochs, batch_size, learning_rate,
                optimizer == Optimizer::kAdam ? "adam" : "sgd", seed);
  return buf;
}

std::string CanonicalPrecision(const PrecisionConfig& c) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "project_activations=%d;round_weights=%d;clip_bound=%.17g;overflow=%s",
                c.project_activations ? 1 : 0, c.round_weights ? 1 : 0, c.clip_bound,
                c.overflow_policy == OverflowPolicy::kSaturate ? "saturate" : "infinity");
  return buf;
}

std::uint64_t Fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TrainLog train_fp32(Network<float>& network, const Dataset& train, const TrainConfig& config) {
  config.Validate();
  TrainLog log;
  if (train.empty()) throw InvalidArgument("train_fp32: empty training set");
  log.steps_per_epoch = StepsPerEpoch(train, config.batch_size);
  if (config.e_fp32 == 0) return log;
  Stepper stepper(config, network.Parameters());
  RunEpochs(network, train, config, config.e_fp32, /*stage=*/1, 0, stepper,
            [&](int) { return config.learning_rate; }, log);
  return log;
}

TrainLog finetune_fp16_aware(Network<float>& network, const Dataset& train,
                             const TrainConfig& config, const PrecisionConfig& precision) {
  config.Validate();
  precision.Validate();
  TrainLog log;
  if (train.empty()) throw InvalidArgument("finetune_fp16_aware: empty training set");
  const int spe = StepsPerEpoch(train, config.batch_size);
  log.steps_per_epoch = spe;
  if (config.warmup_epochs + config.e_lp == 0) return log;
  wrap_network(network, precision);
  try {
    Stepper stepper(config, network.Parameters());
    const int warm_steps = config.warmup_epochs * spe;
    RunEpochs(network, train, config, config.warmup_epochs + config.e_lp, /*stage=*/2, 0,
              stepper,
              [&](int step) {
                if (step < warm_steps) {
                  return config.learning_rate * (step + 1) / warm_steps;
                }
                return config.learning_rate;
              },
              log);
  } catch (...) {
    unwrap_network(network);
    throw;
  }
  unwrap_network(network);
  return log;
}

double evaluate(Network<float>& network, const Dataset& data, EvalMode mode, int batch_size) {
  if (data.empty()) throw InvalidArgument("evaluate: empty dataset");
  if (batch_size < 1) throw InvalidArgument("evaluate: batch_size must be >= 1");
  ConfusionAccumulator acc(network.num_classes());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    auto [images, labels] = MakeBatch(data, idx);
    Tensor<float> logits = mode == EvalMode::kDeploy ? deploy_mode_forward(network, images)
                                                     : eval_forward(network, images);
    acc.Add(ArgmaxLabels(logits), labels);
  }
  return acc.MeanIoU();
}

void save_checkpoint(const std::filesystem::path& path, const Network<float>& network,
                     std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  Genotype g{network.tokens()};
  auto state = network.State();
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016" PRIx64, config_hash);
  out << kCkptTag << " 1 genotype=" << serialize(g) << " config_hash=" << hash
      << " tensors=" << state.size() << '\n';
  for (const auto& [name, tensor] : state) {
    out << name << '\n';
    write_container(out, tensor);
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string manifest;
  std::getline(in, manifest);
  std::istringstream ms(manifest);
  std::string tag, version, g_field, h_field, n_field;
  ms >> tag >> version >> g_field >> h_field >> n_field;
  auto value_of = [&](const std::string& field, std::string_view key) {
    if (field.rfind(key, 0) != 0) {
      throw IoError("checkpoint manifest: expected '" + std::string(key) + "' in " +
                    path.string());
    }
    return field.substr(key.size());
  };
  if (tag != kCkptTag || version != "1") {
    throw IoError("not a version-1 checkpoint: " + path.string());
  }
  Checkpoint ck;
  ck.genotype = value_of(g_field, "genotype=");
  const std::string hash = value_of(h_field, "config_hash=");
  const std::string count = value_of(n_field, "tensors=");
  try {
    ck.config_hash = std::stoull(hash, nullptr, 16);
    const unsigned long n = std::stoul(count);
    for (unsigned long i = 0; i < n; ++i) {
      std::string name;
      if (!std::getline(in, name)) throw IoError("checkpoint truncated at tensor " + std::to_string(i));
      AnyTensor t = read_container(in);
      auto* f = std::get_if<Tensor<float>>(&t);
      if (!f) throw IoError("checkpoint tensor " + name + " is not binary32");
      ck.state.emplace_back(std::move(name), std::move(*f));
    }
  } catch (const std::logic_error&) {
    throw IoError("checkpoint manifest has malformed numbers: " + path.string());
  }
  return ck;
}

Network<float> restore_network(const Checkpoint& checkpoint, int in_channels, int num_classes) {
  Genotype g = parse_syntax(checkpoint.genotype);
  Network<float> net = Network<float>::Build(g.tokens, in_channels, num_classes);
  net.LoadState(checkpoint.state);
  return net;
}

}  // namespace lpnas
