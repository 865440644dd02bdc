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

#include "lpnas/precision.h"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "lpnas/error.h"

namespace lpnas {

namespace {

constexpr std::uint16_t kHalfMaxBits = 0x7BFF;
constexpr std::uint16_t kHalfInfBits = 0x7C00;

std::uint16_t Overflow(std::uint16_t sign, OverflowPolicy policy) {
  return sign | (policy == OverflowPolicy::kSaturate ? kHalfMaxBits : kHalfInfBits);
}

}  // namespace

std::uint16_t ToHalfBits(double x, OverflowPolicy policy) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000);
  const int exp_field = static_cast<int>((bits >> 52) & 0x7FF);
  const std::uint64_t frac = bits & ((std::uint64_t{1} << 52) - 1);

  if (exp_field == 0x7FF) {
    if (frac != 0) return sign | 0x7E00;
    return Overflow(sign, policy);
  }
  // binary64 subnormals are far below half precision.
  if (exp_field == 0) return sign;

  const int e = exp_field - 1023;
  if (e > 15) return Overflow(sign, policy);

  if (e >= -14) {
    // Normal half: keep 10 of the 52 fraction bits.
    std::uint64_t kept = frac >> 42;
    const std::uint64_t rem = frac & ((std::uint64_t{1} << 42) - 1);
    const std::uint64_t halfway = std::uint64_t{1} << 41;
    std::uint32_t result = (static_cast<std::uint32_t>(e + 15) << 10) |
                           static_cast<std::uint32_t>(kept);
    if (rem > halfway || (rem == halfway && (kept & 1))) ++result;  // may carry
    if (result >= kHalfInfBits) return Overflow(sign, policy);
    return sign | static_cast<std::uint16_t>(result);
  }

  // Subnormal half: units of 2^-24. value = mant * 2^(e - 52).
  const std::uint64_t mant = frac | (std::uint64_t{1} << 52);
  const int shift = 28 - e;  // >= 43
  if (shift > 54) return sign;  // below 2^-26, rounds to zero
  const std::uint64_t kept = mant >> shift;
  const std::uint64_t rem = mant & ((std::uint64_t{1} << shift) - 1);
  const std::uint64_t halfway = std::uint64_t{1} << (shift - 1);
  std::uint32_t result = static_cast<std::uint32_t>(kept);
  if (rem > halfway || (rem == halfway && (kept & 1))) ++result;
  return sign | static_cast<std::uint16_t>(result);
}

double FromHalfBits(std::uint16_t bits) {
  const bool negative = (bits & 0x8000) != 0;
  const int exp_field = (bits >> 10) & 0x1F;
  const int frac = bits & 0x3FF;
  double v;
  if (exp_field == 0) {
    v = std::ldexp(static_cast<double>(frac), -24);
  } else if (exp_field == 0x1F) {
    v = frac == 0 ? std::numeric_limits<double>::infinity()
                  : std::numeric_limits<double>::quiet_NaN();
  } else {
    v = std::ldexp(static_cast<double>(frac | 0x400), exp_field - 25);
  }
  return negative ? -v : v;
}

template <typename T>
void ProjectInPlace(Tensor<T>& t, OverflowPolicy policy) {
  for (T& v : t.vec()) v = project_fp16(v, policy);
}

void PrecisionConfig::Validate() const {
  if (!(clip_bound > 0.0) || !(clip_bound < kHalfMax)) {
    throw InvalidArgument("clip_bound must lie in (0, 65504), got " +
                          std::to_string(clip_bound));
  }
  if (warmup_epochs < 0) {
    throw InvalidArgument("warmup_epochs must be >= 0");
  }
}

std::vector<ProjectionSite> ProjectionSites(const PrecisionConfig& config) {
  return {{SiteLocation::kConvOutput, config.project_activations},
          {SiteLocation::kLinearOutput, config.project_activations},
          {SiteLocation::kWeightForward, config.round_weights}};
}

template <typename T>
Var<T> project_fp16_ste(Var<T> input, OverflowPolicy policy) {
  Tensor<T> out = ProjectTensor(input.value(), policy);
  const int xid = input.id();
  return input.tape().Record(std::move(out), {input}, [xid](Tape<T>& t, int self) {
    const Tensor<T> g = ste_backward(t.grad(self));
    Tensor<T>& gx = t.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> clip_activation(Var<T> input, double bound) {
  if (!(bound > 0.0)) throw InvalidArgument("clip bound must be positive");
  const T b = static_cast<T>(bound);
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  Tape<T>& tape = input.tape();
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::min(std::max(x[i], -b), b);
    if (tape.track_kinks()) {
      tape.NoteKinkDistance(std::fabs(std::fabs(static_cast<double>(x[i])) - bound));
    }
  }
  const int xid = input.id();
  return tape.Record(std::move(out), {input}, [xid, b](Tape<T>& t, int self) {
    const Tensor<T>& xv = t.value(xid);
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (std::fabs(xv[i]) <= b) gx[i] += gy[i];
    }
  });
}

template void ProjectInPlace(Tensor<float>&, OverflowPolicy);
template void ProjectInPlace(Tensor<double>&, OverflowPolicy);
template Var<float> project_fp16_ste(Var<float>, OverflowPolicy);
template Var<double> project_fp16_ste(Var<double>, OverflowPolicy);
template Var<float> clip_activation(Var<float>, double);
template Var<double> clip_activation(Var<double>, double);

}  // namespace lpnas
