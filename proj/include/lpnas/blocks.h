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

#ifndef LPNAS_BLOCKS_H_
#define LPNAS_BLOCKS_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lpnas/ops.h"
#include "lpnas/precision.h"
#include "lpnas/rng.h"
#include "lpnas/tape.h"
#include "lpnas/tensor.h"

namespace lpnas {

enum class BlockKind {
  kConvAct,
  kConvBnAct,
  kConvSE,
  kMBConv,
  kMBConvNoRes,
  kCSPConv,
  kCSPMBConv,
  kDenseNet,
  kResNet,
};

inline constexpr BlockKind kAllBlockKinds[] = {
    BlockKind::kConvAct,  BlockKind::kConvBnAct,   BlockKind::kConvSE,
    BlockKind::kMBConv,   BlockKind::kMBConvNoRes, BlockKind::kCSPConv,
    BlockKind::kCSPMBConv, BlockKind::kDenseNet,   BlockKind::kResNet,
};

const char* BlockKindName(BlockKind kind);

// Which optional fields a kind carries.
bool UsesKernel(BlockKind kind);
bool UsesExpansion(BlockKind kind);
bool UsesWidth(BlockKind kind);

// One learnable block. Fields that do not apply to `kind` are nullopt.
struct BlockSpec {
  BlockKind kind = BlockKind::kConvAct;
  std::optional<int> kernel;
  std::optional<int> expansion;
  std::optional<int> width;
  Activation act = Activation::kRelu;

  bool operator==(const BlockSpec&) const = default;
};

// Squeeze-and-excitation reduction: channels / 4, at least 4.
int SeReducedChannels(int channels);

struct PoolToken {
  PoolKind kind = PoolKind::kMax;
  bool operator==(const PoolToken&) const = default;
};

// Dropout rate in tenths (1 -> 0.1, 2 -> 0.2).
struct DropToken {
  int tenths = 1;
  double rate() const { return tenths / 10.0; }
  bool operator==(const DropToken&) const = default;
};

using Token = std::variant<BlockSpec, PoolToken, DropToken>;

struct HeadSpec {
  int num_classes = 2;
  int pools = 0;
  int upsample_factor() const { return 1 << pools; }
};

// Cost record for one inference-graph operator (per image, BN folded).
struct OpCost {
  std::string name;
  std::int64_t macs = 0;
  std::int64_t in_elems = 0;
  std::int64_t out_elems = 0;
  std::int64_t weight_elems = 0;
};

enum class ExecMode { kTrain, kEval, kDeploy };

// Per-forward execution state threaded through every layer.
template <typename T>
struct ForwardContext {
  Tape<T>* tape = nullptr;
  ExecMode mode = ExecMode::kEval;
  Rng* dropout_rng = nullptr;
  // Training-time FP16 emulation; nullptr when the network is not wrapped.
  const PrecisionConfig* wrap = nullptr;
  bool update_running_stats = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  bool train() const { return mode == ExecMode::kTrain; }
  bool deploy() const { return mode == ExecMode::kDeploy; }

  // Deploy mode rounds the output of every operator to FP16.
  Var<T> Post(Var<T> v) const {
    return deploy() ? project_fp16_ste(v) : v;
  }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) = 0;
  // Appends inference-graph costs for a (1, C, H, W) input; returns the
  // output shape.
  virtual Shape Describe(Shape in, std::vector<OpCost>& ops) const = 0;
  virtual std::vector<Parameter<T>*> Parameters() { return {}; }
  // Non-learnable persistent state (batchnorm running statistics).
  virtual std::vector<std::pair<std::string, Tensor<T>*>> Buffers() { return {}; }
};

template <typename T>
struct BuiltBlock {
  std::unique_ptr<Layer<T>> layer;
  int out_channels = 0;
};

// Instantiates `spec` for `in_channels` inputs. Parameter names are
// prefixed with `prefix`. Throws InvalidArgument for a spec whose fields do
// not fit its kind.
template <typename T>
BuiltBlock<T> build_block(const BlockSpec& spec, int in_channels, Rng& init_rng,
                          const std::string& prefix = "");

// Checks field applicability and the fixed value sets (kernel, expansion);
// returns human-readable problems.
std::vector<std::string> CheckSpecFields(const BlockSpec& spec);

// Single-path network: token sequence followed by the fixed segmentation head
// (nearest upsample to input resolution, then a 1x1 conv to class logits).
template <typename T>
class Network {
 public:
  static Network Build(std::span<const Token> tokens, int in_channels = 3,
                       int num_classes = 2, std::uint64_t init_seed = 0);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  // Fresh network with identical architecture and state.
  Network Clone() const;
  template <typename U>
  Network<U> CastTo() const;

  Var<T> Forward(ForwardContext<T>& ctx, Var<T> input);

  std::vector<Parameter<T>*> Parameters();
  std::vector<std::pair<std::string, Tensor<T>*>> Buffers();
  // Named parameters followed by named buffers.
  std::vector<std::pair<std::string, Tensor<T>>> State() const;
  void LoadState(const std::vector<std::pair<std::string, Tensor<T>>>& state);

  void ZeroGrad();

  std::vector<OpCost> Describe(Shape input) const;

  const std::vector<Token>& tokens() const { return tokens_; }
  int in_channels() const { return in_channels_; }
  int num_classes() const { return head_spec_.num_classes; }
  const HeadSpec& head_spec() const { return head_spec_; }

  bool wrapped() const { return wrap_.has_value(); }
  const PrecisionConfig* wrap_config() const {
    return wrap_ ? &*wrap_ : nullptr;
  }
  void set_wrap(std::optional<PrecisionConfig> wrap) { wrap_ = std::move(wrap); }

 private:
  Network() = default;

  std::vector<Token> tokens_;
  int in_channels_ = 3;
  HeadSpec head_spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::unique_ptr<Layer<T>> head_;
  std::optional<PrecisionConfig> wrap_;
};

// Exact number of learnable scalars.
template <typename T>
std::int64_t param_count(Network<T>& network);

// Multiply-accumulates of one forward pass for input (N, C, H, W).
template <typename T>
std::int64_t mac_count(const Network<T>& network, Shape input);

// Parameter count of an architecture without keeping the network.
std::int64_t ParamCountOf(std::span<const Token> tokens, int in_channels = 3,
                          int num_classes = 2);

}  // namespace lpnas

#endif  // LPNAS_BLOCKS_H_
