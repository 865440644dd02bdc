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

#include "lpnas/wrap.h"

#include "lpnas/tape.h"

namespace lpnas {

namespace {

template <typename T>
Tensor<T> RunGradFree(Network<T>& network, const Tensor<T>& input, ExecMode mode) {
  Tape<T> tape(/*grad_enabled=*/false);
  ForwardContext<T> ctx;
  ctx.tape = &tape;
  ctx.mode = mode;
  ctx.update_running_stats = false;
  Var<T> out = network.Forward(ctx, tape.Constant(input));
  return out.value();
}

}  // namespace

template <typename T>
Network<T>& wrap_network(Network<T>& network, const PrecisionConfig& config) {
  if (network.wrapped()) throw InvalidArgument("wrap_network: network is already wrapped");
  config.Validate();
  network.set_wrap(config);
  return network;
}

template <typename T>
Network<T>& unwrap_network(Network<T>& network) {
  network.set_wrap(std::nullopt);
  return network;
}

template <typename T>
Tensor<T> deploy_mode_forward(Network<T>& network, const Tensor<T>& input) {
  return RunGradFree(network, input, ExecMode::kDeploy);
}

template <typename T>
Tensor<T> eval_forward(Network<T>& network, const Tensor<T>& input) {
  return RunGradFree(network, input, ExecMode::kEval);
}

#define LPNAS_INSTANTIATE(T)                                                  \
  template Network<T>& wrap_network(Network<T>&, const PrecisionConfig&);     \
  template Network<T>& unwrap_network(Network<T>&);                           \
  template Tensor<T> deploy_mode_forward(Network<T>&, const Tensor<T>&);      \
  template Tensor<T> eval_forward(Network<T>&, const Tensor<T>&);

LPNAS_INSTANTIATE(float)
LPNAS_INSTANTIATE(double)
#undef LPNAS_INSTANTIATE

}  // namespace lpnas
