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

#ifndef LPNAS_OPS_H_
#define LPNAS_OPS_H_

#include <optional>

#include "lpnas/rng.h"
#include "lpnas/tape.h"
#include "lpnas/tensor.h"

namespace lpnas {

enum class Activation { kRelu, kGelu, kSigmoid };
enum class PoolKind { kMax, kAvg };
enum class BnMode { kTrain, kEval };

// Per-channel running statistics, shape (1, C, 1, 1).
template <typename T>
struct RunningStats {
  RunningStats() = default;
  explicit RunningStats(int channels)
      : mean(Shape{1, channels, 1, 1}, T{0}),
        var(Shape{1, channels, 1, 1}, T{1}) {}
  Tensor<T> mean;
  Tensor<T> var;
};

struct BatchNormOptions {
  BnMode mode = BnMode::kTrain;
  double eps = 1e-5;
  double momentum = 0.1;
  bool update_running_stats = true;
};

// Stride-1 convolution with zero "same" padding of floor(k/2). `weight` has
// shape (C_out, C_in, k, k), k in {1, 3, 5}; `bias`, if given, (1, C_out, 1, 1).
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::optional<Var<T>> bias);

// Per-channel convolution; weight (C, 1, k, k).
template <typename T>
Var<T> depthwise_conv2d(Var<T> input, Var<T> weight);

template <typename T>
Var<T> batchnorm2d(Var<T> input, Var<T> gamma, Var<T> beta,
                   RunningStats<T>& stats, const BatchNormOptions& options);

// GELU is the exact x * Phi(x) form.
template <typename T>
Var<T> activation(Var<T> input, Activation kind);

// 2x2 window, stride 2. Odd extents are padded on the right/bottom with an
// element that never wins (max) or is not counted (avg).
template <typename T>
Var<T> pool2d(Var<T> input, PoolKind kind);

template <typename T>
Var<T> global_avg_pool(Var<T> input);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

// Channels [begin, begin + count) of `input`.
template <typename T>
Var<T> slice_channels(Var<T> input, int begin, int count);

// x + b with b of shape (1, C, 1, 1).
template <typename T>
Var<T> bias_add(Var<T> input, Var<T> bias);

// a * b with b of shape (N, C, 1, 1).
template <typename T>
Var<T> mul_broadcast(Var<T> a, Var<T> b);

// Nearest-neighbour replication by `factor`; the result is cropped to
// (out_h, out_w) when those are non-negative.
template <typename T>
Var<T> upsample_nearest(Var<T> input, int factor, int out_h = -1,
                        int out_w = -1);

// Inverted dropout. Identity unless `train`.
template <typename T>
Var<T> dropout(Var<T> input, double rate, bool train, Rng& rng);

// Reductions and elementwise helpers used by losses and tests.
template <typename T>
Var<T> sum(Var<T> input);

template <typename T>
Var<T> weighted_sum(Var<T> input, const Tensor<T>& weights);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> input, T factor);

}  // namespace lpnas

#endif  // LPNAS_OPS_H_
