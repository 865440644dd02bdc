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

#ifndef LPNAS_PRECISION_H_
#define LPNAS_PRECISION_H_

#include <cstdint>
#include <vector>

#include "lpnas/tape.h"
#include "lpnas/tensor.h"

namespace lpnas {

// Behaviour for magnitudes beyond the largest finite binary16 value.
enum class OverflowPolicy { kSaturate, kInfinity };

inline constexpr double kHalfMax = 65504.0;

// Nearest binary16 encoding of `x` under round-to-nearest, ties-to-even.
// Subnormal halves are produced exactly; NaN maps to a quiet NaN.
std::uint16_t ToHalfBits(double x,
                         OverflowPolicy policy = OverflowPolicy::kSaturate);
double FromHalfBits(std::uint16_t bits);

// Rounds to the nearest binary16 value and widens back.
template <typename T>
T project_fp16(T x, OverflowPolicy policy = OverflowPolicy::kSaturate) {
  return static_cast<T>(FromHalfBits(ToHalfBits(static_cast<double>(x), policy)));
}

template <typename T>
void ProjectInPlace(Tensor<T>& t, OverflowPolicy policy = OverflowPolicy::kSaturate);

template <typename T>
Tensor<T> ProjectTensor(const Tensor<T>& t,
                        OverflowPolicy policy = OverflowPolicy::kSaturate) {
  Tensor<T> out = t;
  ProjectInPlace(out, policy);
  return out;
}

// Training-time FP16 emulation policy.
struct PrecisionConfig {
  bool project_activations = true;
  bool round_weights = true;
  double clip_bound = 12.0;
  OverflowPolicy overflow_policy = OverflowPolicy::kSaturate;
  int warmup_epochs = 1;

  // Throws InvalidArgument unless 0 < clip_bound < 65504 and warmup >= 0.
  void Validate() const;
  bool AllOff() const { return !project_activations && !round_weights; }
};

enum class SiteLocation { kConvOutput, kLinearOutput, kWeightForward };

struct ProjectionSite {
  SiteLocation location;
  bool enabled;
};

std::vector<ProjectionSite> ProjectionSites(const PrecisionConfig& config);

// Forward: FP16 projection. Backward: straight-through (upstream gradient is
// passed unchanged, including at saturated elements).
template <typename T>
Var<T> project_fp16_ste(Var<T> input,
                        OverflowPolicy policy = OverflowPolicy::kSaturate);

// Upstream gradient is the identity map.
template <typename T>
Tensor<T> ste_backward(const Tensor<T>& upstream) {
  return upstream;
}

// min(max(x, -bound), bound). Gradient passes where |x| <= bound.
template <typename T>
Var<T> clip_activation(Var<T> input, double bound = 12.0);

}  // namespace lpnas

#endif  // LPNAS_PRECISION_H_
