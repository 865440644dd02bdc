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

#include "lpnas/blocks.h"

#include <cmath>
#include <map>

#include "lpnas/error.h"

namespace lpnas {

const char* BlockKindName(BlockKind kind) {
  switch (kind) {
    case BlockKind::kConvAct: return "ConvAct";
    case BlockKind::kConvBnAct: return "ConvBnAct";
    case BlockKind::kConvSE: return "ConvSE";
    case BlockKind::kMBConv: return "MBConv";
    case BlockKind::kMBConvNoRes: return "MBConvNoRes";
    case BlockKind::kCSPConv: return "CSPConvBlock";
    case BlockKind::kCSPMBConv: return "CSPMBConvBlock";
    case BlockKind::kDenseNet: return "DenseNetBlock";
    case BlockKind::kResNet: return "ResNetBlock";
  }
  return "?";
}

bool UsesKernel(BlockKind kind) {
  return kind == BlockKind::kConvAct || kind == BlockKind::kConvBnAct ||
         kind == BlockKind::kConvSE || kind == BlockKind::kResNet;
}

bool UsesExpansion(BlockKind kind) {
  return kind == BlockKind::kMBConv || kind == BlockKind::kMBConvNoRes ||
         kind == BlockKind::kCSPMBConv;
}

bool UsesWidth(BlockKind kind) {
  return kind != BlockKind::kCSPConv && kind != BlockKind::kCSPMBConv;
}

int SeReducedChannels(int channels) { return std::max(4, channels / 4); }

std::vector<std::string> CheckSpecFields(const BlockSpec& spec) {
  std::vector<std::string> problems;
  const std::string name = BlockKindName(spec.kind);
  if (UsesKernel(spec.kind) != spec.kernel.has_value()) {
    problems.push_back(name + (spec.kernel ? " takes no kernel field"
                                           : " requires a kernel field"));
  } else if (spec.kernel && *spec.kernel != 1 && *spec.kernel != 3 &&
             *spec.kernel != 5) {
    problems.push_back("kernel " + std::to_string(*spec.kernel) +
                       " not in {1,3,5}");
  }
  if (UsesExpansion(spec.kind) != spec.expansion.has_value()) {
    problems.push_back(name + (spec.expansion ? " takes no expansion field"
                                              : " requires an expansion field"));
  } else if (spec.expansion && (*spec.expansion < 2 || *spec.expansion > 4)) {
    problems.push_back("expansion " + std::to_string(*spec.expansion) +
                       " not in {2,3,4}");
  }
  if (UsesWidth(spec.kind) != spec.width.has_value()) {
    problems.push_back(name + (spec.width ? " takes no width field"
                                          : " requires a width field"));
  } else if (spec.width && *spec.width < 1) {
    problems.push_back("width must be positive");
  }
  if (spec.act != Activation::kRelu && spec.act != Activation::kGelu) {
    problems.push_back("activation must be ReLU or GELU");
  }
  return problems;
}

namespace {

template <typename T>
Tensor<T> UniformInit(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = std::sqrt(6.0 / std::max(1, fan_in));
  for (auto& v : t.vec()) v = static_cast<T>(rng.Uniform(-bound, bound));
  return t;
}

OpCost Elementwise(const char* name, std::int64_t in, std::int64_t out) {
  return OpCost{name, 0, in, out, 0};
}

// Convolution (dense or depthwise) with optional bias and optional
// batchnorm. The unit is the FP16 projection site: training-time wrapping
// clips and projects its output, deploy mode folds the batchnorm.
template <typename T>
class ConvUnit {
 public:
  enum class Type { kDense, kDepthwise };

  ConvUnit(const std::string& name, Type type, int in, int out, int k,
           bool use_bias, bool use_bn, Rng& rng)
      : type_(type), in_(in), out_(out), k_(k), has_bn_(use_bn) {
    const Shape ws = type == Type::kDense ? Shape{out, in, k, k} : Shape{out, 1, k, k};
    const int fan_in = (type == Type::kDense ? in : 1) * k * k;
    weight_ = Parameter<T>(name + ".weight", UniformInit<T>(ws, fan_in, rng));
    if (use_bias) {
      bias_.emplace(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
    }
    if (use_bn) {
      gamma_ = Parameter<T>(name + ".bn.gamma", Tensor<T>(Shape{1, out, 1, 1}, T(1)));
      beta_ = Parameter<T>(name + ".bn.beta", Tensor<T>(Shape{1, out, 1, 1}, T(0)));
      stats_ = RunningStats<T>(out);
      stats_names_ = {name + ".bn.running_mean", name + ".bn.running_var"};
    }
  }

  int out_channels() const { return out_; }

  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) {
    Tape<T>& tape = *ctx.tape;
    if (ctx.deploy()) return DeployForward(ctx, x);
    const PrecisionConfig* wrap = ctx.wrap;
    const bool round = wrap && wrap->round_weights;
    Var<T> w = tape.Param(weight_);
    if (round) w = project_fp16_ste(w, wrap->overflow_policy);
    Var<T> y;
    if (type_ == Type::kDense) {
      std::optional<Var<T>> b;
      if (bias_) {
        b = tape.Param(*bias_);
        if (round) b = project_fp16_ste(*b, wrap->overflow_policy);
      }
      y = conv2d(x, w, b);
    } else {
      y = depthwise_conv2d(x, w);
      if (bias_) y = bias_add(y, tape.Param(*bias_));
    }
    if (wrap && wrap->project_activations) {
      y = clip_activation(y, wrap->clip_bound);
      y = project_fp16_ste(y, wrap->overflow_policy);
    }
    if (has_bn_) {
      BatchNormOptions opts;
      opts.mode = ctx.train() ? BnMode::kTrain : BnMode::kEval;
      opts.eps = ctx.bn_eps;
      opts.momentum = ctx.bn_momentum;
      opts.update_running_stats = ctx.update_running_stats;
      y = batchnorm2d(y, tape.Param(gamma_), tape.Param(beta_), stats_, opts);
    }
    return y;
  }

  Shape Describe(Shape in, std::vector<OpCost>& ops) const {
    const std::int64_t hw = static_cast<std::int64_t>(in.h) * in.w;
    const std::int64_t kk = static_cast<std::int64_t>(k_) * k_;
    OpCost c;
    c.name = type_ == Type::kDense ? "conv" : "dwconv";
    c.macs = (type_ == Type::kDense ? static_cast<std::int64_t>(in_) * out_ : out_) * kk * hw;
    c.in_elems = static_cast<std::int64_t>(in_) * hw;
    c.out_elems = static_cast<std::int64_t>(out_) * hw;
    c.weight_elems = static_cast<std::int64_t>(weight_.value.size()) +
                     ((bias_ || has_bn_) ? out_ : 0);
    ops.push_back(c);
    return Shape{in.n, out_, in.h, in.w};
  }

  void CollectParameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
    if (has_bn_) {
      out.push_back(&gamma_);
      out.push_back(&beta_);
    }
  }

  void CollectBuffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    if (!has_bn_) return;
    out.emplace_back(stats_names_[0], &stats_.mean);
    out.emplace_back(stats_names_[1], &stats_.var);
  }

 private:
  // BN folded into the conv, parameters rounded once, output rounded.
  Var<T> DeployForward(ForwardContext<T>& ctx, Var<T> x) {
    Tape<T>& tape = *ctx.tape;
    Tensor<T> w = weight_.value;
    Tensor<T> b(Shape{1, out_, 1, 1});
    if (bias_) b = bias_->value;
    if (has_bn_) {
      const std::size_t per_out = w.size() / out_;
      for (int c = 0; c < out_; ++c) {
        const T s = gamma_.value[c] /
                    std::sqrt(stats_.var[c] + static_cast<T>(ctx.bn_eps));
        for (std::size_t i = 0; i < per_out; ++i) w[c * per_out + i] *= s;
        b[c] = (b[c] - stats_.mean[c]) * s + beta_.value[c];
      }
    }
    ProjectInPlace(w);
    ProjectInPlace(b);
    Var<T> y;
    if (type_ == Type::kDense) {
      y = conv2d<T>(x, tape.Constant(std::move(w)), tape.Constant(std::move(b)));
    } else {
      y = bias_add(depthwise_conv2d(x, tape.Constant(std::move(w))),
                   tape.Constant(std::move(b)));
    }
    return ctx.Post(y);
  }

  Type type_;
  int in_, out_, k_;
  bool has_bn_;
  Parameter<T> weight_;
  std::optional<Parameter<T>> bias_;
  Parameter<T> gamma_, beta_;
  RunningStats<T> stats_;
  std::vector<std::string> stats_names_;
};

template <typename T>
Var<T> Act(ForwardContext<T>& ctx, Var<T> x, Activation a) {
  return ctx.Post(activation(x, a));
}

template <typename T>
using Units = std::vector<std::unique_ptr<ConvUnit<T>>>;

// Shared plumbing for blocks assembled from ConvUnits.
template <typename T>
class UnitBlock : public Layer<T> {
 public:
  std::vector<Parameter<T>*> Parameters() override {
    std::vector<Parameter<T>*> out;
    for (auto& u : units_) u->CollectParameters(out);
    return out;
  }
  std::vector<std::pair<std::string, Tensor<T>*>> Buffers() override {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& u : units_) u->CollectBuffers(out);
    return out;
  }

 protected:
  ConvUnit<T>& AddUnit(const std::string& name, typename ConvUnit<T>::Type type,
                       int in, int out, int k, bool bias, bool bn, Rng& rng) {
    units_.push_back(std::make_unique<ConvUnit<T>>(name, type, in, out, k, bias, bn, rng));
    return *units_.back();
  }
  static constexpr auto kDense = ConvUnit<T>::Type::kDense;
  static constexpr auto kDepthwise = ConvUnit<T>::Type::kDepthwise;

  Units<T> units_;
};

// conv -> [bn] -> act
template <typename T>
class ConvActBlock : public UnitBlock<T> {
 public:
  ConvActBlock(const std::string& p, int in, int width, int k, Activation act,
               bool bn, Rng& rng)
      : act_(act) {
    conv_ = &this->AddUnit(p + "conv", this->kDense, in, width, k, !bn, bn, rng);
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    return Act(ctx, conv_->Forward(ctx, x), act_);
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    Shape s = conv_->Describe(in, ops);
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    return s;
  }

 private:
  Activation act_;
  ConvUnit<T>* conv_;
};

// conv -> act -> squeeze-and-excitation gate
template <typename T>
class ConvSEBlock : public UnitBlock<T> {
 public:
  ConvSEBlock(const std::string& p, int in, int width, int k, Activation act, Rng& rng)
      : act_(act) {
    const int r = SeReducedChannels(width);
    conv_ = &this->AddUnit(p + "conv", this->kDense, in, width, k, true, false, rng);
    reduce_ = &this->AddUnit(p + "se_reduce", this->kDense, width, r, 1, true, false, rng);
    expand_ = &this->AddUnit(p + "se_expand", this->kDense, r, width, 1, true, false, rng);
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    Var<T> y = Act(ctx, conv_->Forward(ctx, x), act_);
    Var<T> s = ctx.Post(global_avg_pool(y));
    s = Act(ctx, reduce_->Forward(ctx, s), act_);
    s = ctx.Post(activation(expand_->Forward(ctx, s), Activation::kSigmoid));
    return ctx.Post(mul_broadcast(y, s));
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    Shape s = conv_->Describe(in, ops);
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    const Shape pooled{s.n, s.c, 1, 1};
    ops.push_back(Elementwise("gap", s.numel(), pooled.numel()));
    Shape r = reduce_->Describe(pooled, ops);
    ops.push_back(Elementwise("act", r.numel(), r.numel()));
    Shape e = expand_->Describe(r, ops);
    ops.push_back(Elementwise("sigmoid", e.numel(), e.numel()));
    ops.push_back(Elementwise("mul", s.numel() + e.numel(), s.numel()));
    return s;
  }

 private:
  Activation act_;
  ConvUnit<T>* conv_;
  ConvUnit<T>* reduce_;
  ConvUnit<T>* expand_;
};

// 1x1 expand -> bn -> act -> dw3x3 -> bn -> act -> 1x1 project -> bn [+ x]
template <typename T>
class MBConvBlock : public UnitBlock<T> {
 public:
  MBConvBlock(const std::string& p, int in, int width, int expansion, Activation act,
              bool allow_residual, Rng& rng)
      : act_(act), residual_(allow_residual && in == width) {
    const int hidden = in * expansion;
    expand_ = &this->AddUnit(p + "expand", this->kDense, in, hidden, 1, false, true, rng);
    dw_ = &this->AddUnit(p + "dw", this->kDepthwise, hidden, hidden, 3, false, true, rng);
    project_ = &this->AddUnit(p + "project", this->kDense, hidden, width, 1, false, true, rng);
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    Var<T> y = Act(ctx, expand_->Forward(ctx, x), act_);
    y = Act(ctx, dw_->Forward(ctx, y), act_);
    y = project_->Forward(ctx, y);
    if (residual_) y = ctx.Post(add(y, x));
    return y;
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    Shape s = expand_->Describe(in, ops);
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    s = dw_->Describe(s, ops);
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    s = project_->Describe(s, ops);
    if (residual_) ops.push_back(Elementwise("add", 2 * s.numel(), s.numel()));
    return s;
  }
  bool residual() const { return residual_; }

 private:
  Activation act_;
  bool residual_;
  ConvUnit<T>* expand_;
  ConvUnit<T>* dw_;
  ConvUnit<T>* project_;
};

// conv -> bn -> act -> conv -> bn, + shortcut, act
template <typename T>
class ResNetBlock : public UnitBlock<T> {
 public:
  ResNetBlock(const std::string& p, int in, int width, int k, Activation act, Rng& rng)
      : act_(act) {
    conv1_ = &this->AddUnit(p + "conv1", this->kDense, in, width, k, false, true, rng);
    conv2_ = &this->AddUnit(p + "conv2", this->kDense, width, width, k, false, true, rng);
    if (in != width) {
      shortcut_ = &this->AddUnit(p + "shortcut", this->kDense, in, width, 1, true, false, rng);
    }
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    Var<T> y = Act(ctx, conv1_->Forward(ctx, x), act_);
    y = conv2_->Forward(ctx, y);
    Var<T> skip = shortcut_ ? shortcut_->Forward(ctx, x) : x;
    return Act(ctx, ctx.Post(add(y, skip)), act_);
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    Shape s = conv1_->Describe(in, ops);
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    s = conv2_->Describe(s, ops);
    if (shortcut_) shortcut_->Describe(in, ops);
    ops.push_back(Elementwise("add", 2 * s.numel(), s.numel()));
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    return s;
  }

 private:
  Activation act_;
  ConvUnit<T>* conv1_;
  ConvUnit<T>* conv2_;
  ConvUnit<T>* shortcut_ = nullptr;
};

// concat(x, act(bn(conv3x3(x))))
template <typename T>
class DenseNetBlock : public UnitBlock<T> {
 public:
  DenseNetBlock(const std::string& p, int in, int growth, Activation act, Rng& rng)
      : act_(act) {
    conv_ = &this->AddUnit(p + "conv", this->kDense, in, growth, 3, false, true, rng);
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    Var<T> y = Act(ctx, conv_->Forward(ctx, x), act_);
    return ctx.Post(concat_channels(x, y));
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    Shape s = conv_->Describe(in, ops);
    ops.push_back(Elementwise("act", s.numel(), s.numel()));
    const Shape out{in.n, in.c + s.c, in.h, in.w};
    ops.push_back(Elementwise("concat", in.numel() + s.numel(), out.numel()));
    return out;
  }

 private:
  Activation act_;
  ConvUnit<T>* conv_;
};

// Cross-stage partial: the first ceil(C/2) channels pass through an inner
// block, the rest bypass it; both are concatenated and mixed by a 1x1
// transition conv.
template <typename T>
class CSPBlock : public Layer<T> {
 public:
  CSPBlock(const std::string& p, int in, std::unique_ptr<Layer<T>> inner, int inner_out,
           Rng& rng)
      : in_(in),
        head_(static_cast<int>((in + 1) / 2)),
        inner_(std::move(inner)),
        inner_out_(inner_out) {
    transition_ = std::make_unique<ConvUnit<T>>(p + "transition", ConvUnit<T>::Type::kDense,
                                                inner_out + (in - head_), in, 1, true,
                                                false, rng);
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    Var<T> a = ctx.Post(slice_channels(x, 0, head_));
    a = inner_->Forward(ctx, a);
    if (in_ > head_) {
      Var<T> b = ctx.Post(slice_channels(x, head_, in_ - head_));
      a = ctx.Post(concat_channels(a, b));
    }
    return transition_->Forward(ctx, a);
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    ops.push_back(Elementwise("split", in.numel(), in.numel()));
    Shape s = inner_->Describe(Shape{in.n, head_, in.h, in.w}, ops);
    Shape cat{in.n, s.c + (in_ - head_), in.h, in.w};
    if (in_ > head_) ops.push_back(Elementwise("concat", cat.numel(), cat.numel()));
    return transition_->Describe(cat, ops);
  }
  std::vector<Parameter<T>*> Parameters() override {
    auto out = inner_->Parameters();
    transition_->CollectParameters(out);
    return out;
  }
  std::vector<std::pair<std::string, Tensor<T>*>> Buffers() override {
    auto out = inner_->Buffers();
    transition_->CollectBuffers(out);
    return out;
  }

 private:
  int in_;
  int head_;
  std::unique_ptr<Layer<T>> inner_;
  int inner_out_;
  std::unique_ptr<ConvUnit<T>> transition_;
};

template <typename T>
class PoolLayer : public Layer<T> {
 public:
  explicit PoolLayer(PoolKind kind) : kind_(kind) {}
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    return ctx.Post(pool2d(x, kind_));
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    const Shape out{in.n, in.c, (in.h + 1) / 2, (in.w + 1) / 2};
    ops.push_back(Elementwise(kind_ == PoolKind::kMax ? "maxpool" : "avgpool", in.numel(),
                              out.numel()));
    return out;
  }

 private:
  PoolKind kind_;
};

template <typename T>
class DropoutLayer : public Layer<T> {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {}
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    if (!ctx.train() || rate_ == 0.0) return x;
    if (ctx.dropout_rng == nullptr) {
      throw InvalidArgument("train-mode dropout needs a random stream");
    }
    return dropout(x, rate_, true, *ctx.dropout_rng);
  }
  Shape Describe(Shape in, std::vector<OpCost>&) const override { return in; }

 private:
  double rate_;
};

// Nearest upsample back to the input resolution, then 1x1 conv to logits.
template <typename T>
class SegmentationHead : public UnitBlock<T> {
 public:
  SegmentationHead(int in, const HeadSpec& spec, Rng& rng) : factor_(spec.upsample_factor()) {
    conv_ = &this->AddUnit("head.conv", this->kDense, in, spec.num_classes, 1, true, false, rng);
  }
  void set_target(int h, int w) {
    target_h_ = h;
    target_w_ = w;
  }
  Var<T> Forward(ForwardContext<T>& ctx, Var<T> x) override {
    if (factor_ > 1 || x.shape().h != target_h_ || x.shape().w != target_w_) {
      x = ctx.Post(upsample_nearest(x, factor_, target_h_, target_w_));
    }
    return conv_->Forward(ctx, x);
  }
  Shape Describe(Shape in, std::vector<OpCost>& ops) const override {
    Shape up{in.n, in.c, target_h_, target_w_};
    if (factor_ > 1) ops.push_back(Elementwise("upsample", in.numel(), up.numel()));
    return conv_->Describe(up, ops);
  }

 private:
  int factor_;
  int target_h_ = 0, target_w_ = 0;
  ConvUnit<T>* conv_;
};

template <typename T>
std::unique_ptr<Layer<T>> MakeInner(const BlockSpec& spec, int in, Rng& rng,
                                    const std::string& prefix, int& out) {
  out = in;
  if (spec.kind == BlockKind::kCSPConv) {
    return std::make_unique<ConvActBlock<T>>(prefix + "inner.", in, in, 3, spec.act, true, rng);
  }
  return std::make_unique<MBConvBlock<T>>(prefix + "inner.", in, in, *spec.expansion, spec.act,
                                          false, rng);
}

}  // namespace

template <typename T>
BuiltBlock<T> build_block(const BlockSpec& spec, int in_channels, Rng& rng,
                          const std::string& prefix) {
  if (in_channels < 1) {
    throw InvalidArgument("build_block: in_channels must be >= 1");
  }
  auto problems = CheckSpecFields(spec);
  if (!problems.empty()) {
    std::string msg = std::string("build_block: invalid ") + BlockKindName(spec.kind) + ":";
    for (const auto& p : problems) msg += " " + p + ";";
    throw InvalidArgument(msg);
  }
  BuiltBlock<T> b;
  switch (spec.kind) {
    case BlockKind::kConvAct:
    case BlockKind::kConvBnAct:
      b.layer = std::make_unique<ConvActBlock<T>>(prefix, in_channels, *spec.width, *spec.kernel,
                                                  spec.act, spec.kind == BlockKind::kConvBnAct,
                                                  rng);
      b.out_channels = *spec.width;
      break;
    case BlockKind::kConvSE:
      b.layer = std::make_unique<ConvSEBlock<T>>(prefix, in_channels, *spec.width, *spec.kernel,
                                                 spec.act, rng);
      b.out_channels = *spec.width;
      break;
    case BlockKind::kMBConv:
    case BlockKind::kMBConvNoRes:
      b.layer = std::make_unique<MBConvBlock<T>>(prefix, in_channels, *spec.width,
                                                 *spec.expansion, spec.act,
                                                 spec.kind == BlockKind::kMBConv, rng);
      b.out_channels = *spec.width;
      break;
    case BlockKind::kResNet:
      b.layer = std::make_unique<ResNetBlock<T>>(prefix, in_channels, *spec.width, *spec.kernel,
                                                 spec.act, rng);
      b.out_channels = *spec.width;
      break;
    case BlockKind::kDenseNet:
      b.layer = std::make_unique<DenseNetBlock<T>>(prefix, in_channels, *spec.width, spec.act,
                                                   rng);
      b.out_channels = in_channels + *spec.width;
      break;
    case BlockKind::kCSPConv:
    case BlockKind::kCSPMBConv: {
      const int head = (in_channels + 1) / 2;
      int inner_out = 0;
      auto inner = MakeInner<T>(spec, head, rng, prefix, inner_out);
      b.layer = std::make_unique<CSPBlock<T>>(prefix, in_channels, std::move(inner), inner_out,
                                              rng);
      b.out_channels = in_channels;
      break;
    }
  }
  return b;
}

template <typename T>
Network<T> Network<T>::Build(std::span<const Token> tokens, int in_channels, int num_classes,
                             std::uint64_t init_seed) {
  if (in_channels < 1 || num_classes < 1) {
    throw InvalidArgument("Network::Build: channel counts must be positive");
  }
  Network<T> net;
  net.tokens_.assign(tokens.begin(), tokens.end());
  net.in_channels_ = in_channels;
  net.head_spec_.num_classes = num_classes;
  Rng rng(init_seed);
  int channels = in_channels;
  int block_index = 0;
  for (const Token& tok : tokens) {
    if (const auto* spec = std::get_if<BlockSpec>(&tok)) {
      auto built = build_block<T>(*spec, channels, rng, "b" + std::to_string(block_index++) + ".");
      net.layers_.push_back(std::move(built.layer));
      channels = built.out_channels;
    } else if (const auto* pool = std::get_if<PoolToken>(&tok)) {
      net.layers_.push_back(std::make_unique<PoolLayer<T>>(pool->kind));
      ++net.head_spec_.pools;
    } else {
      net.layers_.push_back(std::make_unique<DropoutLayer<T>>(std::get<DropToken>(tok).rate()));
    }
  }
  net.head_ = std::make_unique<SegmentationHead<T>>(channels, net.head_spec_, rng);
  // Name uniqueness is part of the checkpoint contract.
  std::map<std::string, int> seen;
  for (auto* p : net.Parameters()) {
    if (seen[p->name]++ > 0) throw Error("duplicate parameter name " + p->name);
  }
  return net;
}

template <typename T>
Network<T> Network<T>::Clone() const {
  Network<T> copy = Build(tokens_, in_channels_, head_spec_.num_classes, 0);
  copy.LoadState(State());
  copy.wrap_ = wrap_;
  return copy;
}

template <typename T>
template <typename U>
Network<U> Network<T>::CastTo() const {
  Network<U> out = Network<U>::Build(tokens_, in_channels_, head_spec_.num_classes, 0);
  std::vector<std::pair<std::string, Tensor<U>>> state;
  for (const auto& [name, t] : State()) state.emplace_back(name, t.template Cast<U>());
  out.LoadState(state);
  out.set_wrap(wrap_);
  return out;
}

template <typename T>
Var<T> Network<T>::Forward(ForwardContext<T>& ctx, Var<T> input) {
  if (input.shape().c != in_channels_) {
    throw ShapeError("Network::Forward", "C",
                     "expected " + std::to_string(in_channels_) + " channels, got " +
                         input.shape().ToString());
  }
  const PrecisionConfig* saved = ctx.wrap;
  ctx.wrap = ctx.deploy() ? nullptr : wrap_config();
  Var<T> x = ctx.Post(input);
  for (auto& layer : layers_) x = layer->Forward(ctx, x);
  auto* head = static_cast<SegmentationHead<T>*>(head_.get());
  head->set_target(input.shape().h, input.shape().w);
  x = head->Forward(ctx, x);
  ctx.wrap = saved;
  return x;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::Parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& layer : layers_) {
    auto ps = layer->Parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  auto hs = head_->Parameters();
  out.insert(out.end(), hs.begin(), hs.end());
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Network<T>::Buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& layer : layers_) {
    auto bs = layer->Buffers();
    out.insert(out.end(), bs.begin(), bs.end());
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Network<T>::State() const {
  auto* self = const_cast<Network<T>*>(this);
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (auto* p : self->Parameters()) out.emplace_back(p->name, p->value);
  for (auto& [name, t] : self->Buffers()) out.emplace_back(name, *t);
  return out;
}

template <typename T>
void Network<T>::LoadState(const std::vector<std::pair<std::string, Tensor<T>>>& state) {
  std::map<std::string, Tensor<T>*> slots;
  for (auto* p : Parameters()) slots[p->name] = &p->value;
  for (auto& [name, t] : Buffers()) slots[name] = t;
  if (slots.size() != state.size()) {
    throw InvalidArgument("LoadState: expected " + std::to_string(slots.size()) +
                          " tensors, got " + std::to_string(state.size()));
  }
  for (const auto& [name, t] : state) {
    auto it = slots.find(name);
    if (it == slots.end()) throw InvalidArgument("LoadState: unknown tensor " + name);
    if (!(it->second->shape() == t.shape())) {
      throw ShapeError("LoadState", name,
                       it->second->shape().ToString() + " vs " + t.shape().ToString());
    }
    *it->second = t;
  }
}

template <typename T>
void Network<T>::ZeroGrad() {
  for (auto* p : Parameters()) p->ZeroGrad();
}

template <typename T>
std::vector<OpCost> Network<T>::Describe(Shape input) const {
  std::vector<OpCost> ops;
  Shape s{1, input.c, input.h, input.w};
  for (const auto& layer : layers_) s = layer->Describe(s, ops);
  auto* head = static_cast<SegmentationHead<T>*>(head_.get());
  head->set_target(input.h, input.w);
  head->Describe(s, ops);
  return ops;
}

template <typename T>
std::int64_t param_count(Network<T>& network) {
  std::int64_t n = 0;
  for (auto* p : network.Parameters()) n += static_cast<std::int64_t>(p->value.size());
  return n;
}

template <typename T>
std::int64_t mac_count(const Network<T>& network, Shape input) {
  std::int64_t macs = 0;
  for (const auto& op : network.Describe(input)) macs += op.macs;
  return macs * std::max(1, input.n);
}

std::int64_t ParamCountOf(std::span<const Token> tokens, int in_channels, int num_classes) {
  auto net = Network<float>::Build(tokens, in_channels, num_classes, 0);
  return param_count(net);
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::CastTo<double>() const;
template Network<float> Network<double>::CastTo<float>() const;
template Network<float> Network<float>::CastTo<float>() const;
template Network<double> Network<double>::CastTo<double>() const;
template BuiltBlock<float> build_block(const BlockSpec&, int, Rng&, const std::string&);
template BuiltBlock<double> build_block(const BlockSpec&, int, Rng&, const std::string&);
template std::int64_t param_count(Network<float>&);
template std::int64_t param_count(Network<double>&);
template std::int64_t mac_count(const Network<float>&, Shape);
template std::int64_t mac_count(const Network<double>&, Shape);

}  // namespace lpnas
