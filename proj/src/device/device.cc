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

#include "lpnas/device.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lpnas/trainer.h"

namespace lpnas {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void DeviceProfile::Validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0; };
  if (!positive(mac_rate)) throw InvalidArgument("device profile: mac_rate must be > 0");
  if (!positive(mem_bandwidth)) {
    throw InvalidArgument("device profile: mem_bandwidth must be > 0");
  }
  if (!positive(per_op_overhead)) {
    throw InvalidArgument("device profile: per_op_overhead must be > 0");
  }
  if (weight_byte_width < 1 || activation_byte_width < 1) {
    throw InvalidArgument("device profile: byte widths must be >= 1");
  }
}

DeviceProfile parse_device_profile(const std::string& text) {
  DeviceProfile p;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("device profile line " + std::to_string(line_no) +
                            ": expected key=value");
    }
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(value, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) {
      throw InvalidArgument("device profile line " + std::to_string(line_no) +
                            ": bad number '" + value + "'");
    }
    if (key == "mac_rate") {
      p.mac_rate = v;
    } else if (key == "mem_bandwidth") {
      p.mem_bandwidth = v;
    } else if (key == "per_op_overhead") {
      p.per_op_overhead = v;
    } else if (key == "weight_byte_width") {
      p.weight_byte_width = static_cast<int>(v);
    } else if (key == "activation_byte_width") {
      p.activation_byte_width = static_cast<int>(v);
    } else {
      throw InvalidArgument("device profile line " + std::to_string(line_no) +
                            ": unknown key '" + key + "'");
    }
  }
  p.Validate();
  return p;
}

DeviceProfile load_device_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open device profile " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_device_profile(ss.str());
}

double estimate_latency(std::span<const OpCost> ops, const DeviceProfile& profile) {
  profile.Validate();
  double seconds = 0;
  for (const OpCost& op : ops) {
    const double bytes =
        static_cast<double>(op.in_elems + op.out_elems) * profile.activation_byte_width +
        static_cast<double>(op.weight_elems) * profile.weight_byte_width;
    seconds += static_cast<double>(op.macs) / profile.mac_rate +
               bytes / profile.mem_bandwidth + profile.per_op_overhead;
  }
  return seconds * 1e3;
}

template <typename T>
double estimate_latency(const Network<T>& network, Shape input, const DeviceProfile& profile) {
  input.n = 1;
  const auto ops = network.Describe(input);
  return estimate_latency(ops, profile);
}

template double estimate_latency(const Network<float>&, Shape, const DeviceProfile&);
template double estimate_latency(const Network<double>&, Shape, const DeviceProfile&);

Measurement measure(Network<float>& network, const Dataset& eval, const DeviceProfile& profile) {
  if (eval.empty()) throw InvalidArgument("measure: empty evaluation set");
  Measurement m;
  m.latency_ms = estimate_latency(network, eval.samples[0].image.shape(), profile);
  m.fps = 1000.0 / m.latency_ms;
  m.miou_device = evaluate(network, eval, EvalMode::kDeploy);
  m.param_count = param_count(network);
  return m;
}

}  // namespace lpnas
