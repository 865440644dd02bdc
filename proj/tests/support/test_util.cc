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

#include "test_util.h"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace lpnas::testing {

namespace fs = std::filesystem;

TempDir::TempDir(std::string_view tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("lpnas_" + std::string(tag) + "_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string ReadBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
void RandomizeBatchNormAffine(Network<T>& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : net.Parameters()) {
    const bool gamma = p->name.find(".bn.gamma") != std::string::npos;
    const bool beta = p->name.find(".bn.beta") != std::string::npos;
    for (T& v : p->value.vec()) {
      if (gamma) v = static_cast<T>(rng.Uniform(0.5, 1.5));
      if (beta) v = static_cast<T>(0.25 * rng.Normal());
    }
  }
}

template void RandomizeBatchNormAffine(Network<float>&, std::uint64_t);
template void RandomizeBatchNormAffine(Network<double>&, std::uint64_t);

Dataset TinyDataset(int n, int image_size, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.image_size = image_size;
  cfg.n_train = n;
  cfg.n_eval = 1;
  cfg.seed = seed;
  return generate_synthetic(cfg).first;
}

}  // namespace lpnas::testing
