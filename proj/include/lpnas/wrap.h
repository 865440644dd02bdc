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

#ifndef LPNAS_WRAP_H_
#define LPNAS_WRAP_H_

#include "lpnas/blocks.h"
#include "lpnas/precision.h"
#include "lpnas/tensor.h"

namespace lpnas {

// Enables training-time FP16 emulation on `network` in place: clip then
// project at every conv output (project_activations) and FP16-rounded weight
// reads with straight-through gradients (round_weights). Master weights are
// untouched. Throws InvalidArgument if the network is already wrapped.
template <typename T>
Network<T>& wrap_network(Network<T>& network, const PrecisionConfig& config);

// Removes the emulation; a no-op on an unwrapped network.
template <typename T>
Network<T>& unwrap_network(Network<T>& network);

// Simulated device inference: BN folded, parameters and input projected to
// FP16, every operator output projected, no clipping. Gradient-free.
template <typename T>
Tensor<T> deploy_mode_forward(Network<T>& network, const Tensor<T>& input);

// Plain eval-mode forward (running BN statistics, dropout off); honours an
// active wrap.
template <typename T>
Tensor<T> eval_forward(Network<T>& network, const Tensor<T>& input);

}  // namespace lpnas

#endif  // LPNAS_WRAP_H_
