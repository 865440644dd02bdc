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

#ifndef LPNAS_DATA_H_
#define LPNAS_DATA_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "lpnas/error.h"
#include "lpnas/metrics.h"
#include "lpnas/tensor.h"

namespace lpnas {

struct Sample {
  Tensor<float> image;  // (1, 3, H, W), values in [0, 1]
  Labels mask;          // (1, 1, H, W), values in {0, 1}
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// Stacks the selected samples into one (B, 3, H, W) image batch and one
// (B, 1, H, W) label batch.
std::pair<Tensor<float>, Labels> MakeBatch(const Dataset& data,
                                           std::span<const std::size_t> indices);

struct SyntheticConfig {
  int image_size = 32;
  int n_train = 200;
  int n_eval = 50;
  int min_vessels = 0;
  int max_vessels = 3;
  double min_aspect = 2.0;
  double max_aspect = 6.0;
  double noise_sigma = 0.05;
  // Probability of a vessel-free frame when min_vessels is 0.
  double empty_fraction = 0.05;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Sea-like background with rotated elongated rectangles ("vessels"); the
// mask is the exact footprint, Gaussian noise is added to the image only.
std::pair<Dataset, Dataset> generate_synthetic(const SyntheticConfig& config);

// Disjoint, covering partition after a seeded shuffle; each partition keeps
// the original sample order. Sizes are rounded cumulative fractions.
std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions,
                           std::uint64_t seed);

// ---- Tensor container ("LPNT") ----
//
//   offset 0  magic "LPNT"
//          4  version (u8) = 1
//          5  dtype (u8): 0 binary32, 1 binary64, 2 u8 labels
//          6  rank (u8), at most 4
//          7  dims, u32 little-endian each (rank of them)
//             payload, little-endian, row-major
//
// Rank-r tensors (r < 4) load as shape (1, ..., 1, d0, ..., d{r-1}).

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kU8 = 2 };

class ContainerError : public IoError {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kCorruptHeader, kUnknownDtype, kTruncated,
                    kTrailingBytes, kDtypeMismatch };
  ContainerError(Kind kind, const std::string& msg) : IoError(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>, Labels>;

void write_container(std::ostream& out, const AnyTensor& tensor);
AnyTensor read_container(std::istream& in);

void save_container(const std::filesystem::path& path, const AnyTensor& tensor);
AnyTensor load_container(const std::filesystem::path& path);

template <typename T>
Tensor<T> load_container_as(const std::filesystem::path& path);

// Directory layout: index.txt (one "image-file mask-file" line per sample,
// paths relative to the directory), images/, masks/.
void save_dataset_dir(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset_dir(const std::filesystem::path& dir);

}  // namespace lpnas

#endif  // LPNAS_DATA_H_
