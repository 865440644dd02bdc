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

#ifndef LPNAS_DEVICE_H_
#define LPNAS_DEVICE_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "lpnas/blocks.h"
#include "lpnas/data.h"

namespace lpnas {

struct DeviceProfile {
  double mac_rate = 3e8;          // MAC/s
  double mem_bandwidth = 1e9;     // bytes/s
  double per_op_overhead = 5e-4;  // s
  int weight_byte_width = 2;
  int activation_byte_width = 2;

  // Throws InvalidArgument unless every field is positive and finite.
  void Validate() const;
};

// key=value lines; '#' starts a comment; unknown keys are an error; keys not
// present keep their defaults.
DeviceProfile load_device_profile(const std::filesystem::path& path);
DeviceProfile parse_device_profile(const std::string& text);

struct Measurement {
  double fps = 0;
  double latency_ms = 0;
  double miou_device = 0;
  std::int64_t param_count = 0;
};

// Sum over operators of macs/mac_rate + bytes/mem_bandwidth + per_op_overhead,
// in milliseconds.
double estimate_latency(std::span<const OpCost> ops, const DeviceProfile& profile);

// Per-frame latency; BatchNorm is folded, so the operator list is the
// network's inference graph for a (1, C, H, W) input.
template <typename T>
double estimate_latency(const Network<T>& network, Shape input, const DeviceProfile& profile);

// Deploy-mode mIoU over `eval` plus the cost-model latency.
Measurement measure(Network<float>& network, const Dataset& eval, const DeviceProfile& profile);

}  // namespace lpnas

#endif  // LPNAS_DEVICE_H_
