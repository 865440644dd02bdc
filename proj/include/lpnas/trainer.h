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

#ifndef LPNAS_TRAINER_H_
#define LPNAS_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lpnas/blocks.h"
#include "lpnas/data.h"
#include "lpnas/precision.h"

namespace lpnas {

enum class Optimizer { kAdam, kSgd };

struct TrainConfig {
  int e_fp32 = 10;
  int e_lp = 10;
  // Governs fine-tuning; PrecisionConfig::warmup_epochs is kept equal by the
  // CLI and is not read here.
  int warmup_epochs = 1;
  int batch_size = 32;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double sgd_momentum = 0.9;
  std::uint64_t seed = 0;

  void Validate() const;
  // Stable "key=value;..." rendering; the basis of the checkpoint hash.
  std::string Canonical() const;
};

std::string CanonicalPrecision(const PrecisionConfig& config);

// 64-bit FNV-1a.
std::uint64_t Fnv1a64(std::string_view bytes);

struct TrainLog {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::vector<double> step_lr;     // learning rate applied at every step
  int steps_per_epoch = 0;
};

// e_fp32 epochs of minibatch optimisation on segmentation_loss. Shuffle and
// dropout streams derive from config.seed. Throws DivergenceError on a
// non-finite loss.
TrainLog train_fp32(Network<float>& network, const Dataset& train,
                    const TrainConfig& config);

// Wraps the network, runs warmup_epochs with the learning rate ramped
// lr·t/(warmup_epochs·steps_per_epoch) for t = 1.., then e_lp epochs at lr,
// then unwraps. Projections are active during warmup.
TrainLog finetune_fp16_aware(Network<float>& network, const Dataset& train,
                             const TrainConfig& config,
                             const PrecisionConfig& precision);

enum class EvalMode { kFp32, kDeploy };

// Mean per-image mIoU. kFp32 is the plain eval-mode forward (an active wrap
// is honoured); kDeploy is deploy_mode_forward.
double evaluate(Network<float>& network, const Dataset& data, EvalMode mode,
                int batch_size = 16);

// ---- checkpoints ----
//
// Text manifest line
//   LPNAS-CKPT 1 genotype=<code> config_hash=<16 hex> tensors=<n>\n
// followed by n records of "<name>\n" + one LPNT container.

struct Checkpoint {
  std::string genotype;
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor<float>>> state;
};

void save_checkpoint(const std::filesystem::path& path, const Network<float>& network,
                     std::uint64_t config_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the network from the manifest genotype and loads the state.
Network<float> restore_network(const Checkpoint& checkpoint, int in_channels = 3,
                               int num_classes = 2);

}  // namespace lpnas

#endif  // LPNAS_TRAINER_H_
