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

#ifndef LPNAS_GRADCHECK_H_
#define LPNAS_GRADCHECK_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpnas/blocks.h"
#include "lpnas/tape.h"
#include "lpnas/tensor.h"

namespace lpnas {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  double kink_distance = 0;  // smallest kink distance seen at the accepted point
  int redraws = 0;
};

// Builds a scalar loss on `tape` from the current parameter values.
using LossBuilder = std::function<Var<double>(Tape<double>& tape)>;

// max over all scalars of |analytic - central difference| / (|analytic| + 1e-12).
GradCheckResult FiniteDiffCheck(std::vector<Parameter<double>*> params, const LossBuilder& loss,
                                double epsilon = 1e-5);

struct FiniteDiffOptions {
  double epsilon = 1e-5;
  double kink_margin = 1e-3;
  int max_redraws = 50;
  std::uint64_t seed = 0;
  // Batch statistics in BatchNorm (running statistics are not touched).
  bool train_mode = true;
};

// Loss = sum of network outputs weighted by fixed N(0,1) draws. An input
// whose forward pass comes within kink_margin of a relu, max-pool or clip
// kink is replaced by a fresh N(0,1) draw. Throws InvalidArgument if no
// kink-free point is found.
GradCheckResult finite_diff_check(Network<double>& network, const Tensor<double>& input,
                                  const FiniteDiffOptions& options = {});

}  // namespace lpnas

#endif  // LPNAS_GRADCHECK_H_
