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

#include "lpnas/data.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lpnas/rng.h"

namespace lpnas {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kMagic[4] = {'L', 'P', 'N', 'T'};
constexpr std::uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

void Draw(Sample& s, int size, Rng& rng, const SyntheticConfig& cfg) {
  s.image = Tensor<float>(Shape{1, 3, size, size});
  s.mask = Labels(Shape{1, 1, size, size});
  const double base[3] = {rng.Uniform(0.08, 0.22), rng.Uniform(0.18, 0.32),
                          rng.Uniform(0.28, 0.45)};
  // Two low-frequency swell components.
  double fx[2], fy[2], ph[2], amp[2];
  for (int i = 0; i < 2; ++i) {
    fx[i] = rng.Uniform(-2.0, 2.0) * 2.0 * kPi / size;
    fy[i] = rng.Uniform(-2.0, 2.0) * 2.0 * kPi / size;
    ph[i] = rng.Uniform(0.0, 2.0 * kPi);
    amp[i] = rng.Uniform(0.02, 0.06);
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double swell = 0;
      for (int i = 0; i < 2; ++i) swell += amp[i] * std::sin(fx[i] * x + fy[i] * y + ph[i]);
      for (int c = 0; c < 3; ++c) s.image.at(0, c, y, x) = static_cast<float>(base[c] + swell);
    }
  }
  int vessels = 0;
  if (cfg.max_vessels > 0) {
    if (cfg.min_vessels == 0 && rng.Bernoulli(cfg.empty_fraction)) {
      vessels = 0;
    } else {
      vessels = rng.IntIn(std::max(cfg.min_vessels, 1), cfg.max_vessels);
    }
  }
  for (int v = 0; v < vessels; ++v) {
    const double cx = rng.Uniform(0.15, 0.85) * size;
    const double cy = rng.Uniform(0.15, 0.85) * size;
    const double length = rng.Uniform(0.2, 0.45) * size;
    const double aspect = rng.Uniform(cfg.min_aspect, cfg.max_aspect);
    const double width = std::max(1.5, length / aspect);
    const double theta = rng.Uniform(0.0, kPi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double tone = rng.Uniform(0.55, 0.85);
    double tint[3];
    for (double& t : tint) t = tone + rng.Uniform(-0.05, 0.05);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double along = dx * ct + dy * st;
        const double across = -dx * st + dy * ct;
        if (std::fabs(along) <= length / 2 && std::fabs(across) <= width / 2) {
          s.mask.at(0, 0, y, x) = 1;
          for (int c = 0; c < 3; ++c) s.image.at(0, c, y, x) = static_cast<float>(tint[c]);
        }
      }
    }
  }
  for (float& p : s.image.vec()) {
    const double noisy = p + cfg.noise_sigma * rng.Normal();
    p = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
}

std::size_t DtypeSize(DType d) {
  switch (d) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

}  // namespace

std::pair<Tensor<float>, Labels> MakeBatch(const Dataset& data,
                                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("MakeBatch: empty index list");
  const Shape is = data.samples.at(indices[0]).image.shape();
  const Shape ms = data.samples.at(indices[0]).mask.shape();
  const int b = static_cast<int>(indices.size());
  Tensor<float> images(Shape{b, is.c, is.h, is.w});
  Labels labels(Shape{b, 1, ms.h, ms.w});
  const std::size_t ipix = is.numel(), mpix = ms.numel();
  for (int i = 0; i < b; ++i) {
    const Sample& s = data.samples.at(indices[i]);
    if (!(s.image.shape() == is) || !(s.mask.shape() == ms)) {
      throw ShapeError("MakeBatch", "shape", "samples of mixed size in one batch");
    }
    std::copy_n(s.image.data(), ipix, images.data() + i * ipix);
    std::copy_n(s.mask.data(), mpix, labels.data() + i * mpix);
  }
  return {std::move(images), std::move(labels)};
}

void SyntheticConfig::Validate() const {
  if (image_size != 16 && image_size != 32 && image_size != 64) {
    throw InvalidArgument("image_size must be 16, 32 or 64, got " + std::to_string(image_size));
  }
  if (n_train < 1 || n_eval < 1) throw InvalidArgument("sample counts must be >= 1");
  if (min_vessels < 0 || max_vessels < min_vessels) {
    throw InvalidArgument("vessel count range must satisfy 0 <= min <= max");
  }
  if (!(min_aspect >= 1.0) || max_aspect < min_aspect) {
    throw InvalidArgument("aspect range must satisfy 1 <= min <= max");
  }
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
  if (!(empty_fraction >= 0.0 && empty_fraction <= 1.0)) {
    throw InvalidArgument("empty_fraction must lie in [0, 1]");
  }
}

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticConfig& config) {
  config.Validate();
  Dataset train, eval;
  train.samples.resize(config.n_train);
  eval.samples.resize(config.n_eval);
  // Each image has its own stream so the two sets are independent of the
  // other's size.
  for (int i = 0; i < config.n_train; ++i) {
    Rng rng(HashSeed({config.seed, 0, static_cast<std::uint64_t>(i)}));
    Draw(train.samples[i], config.image_size, rng, config);
  }
  for (int i = 0; i < config.n_eval; ++i) {
    Rng rng(HashSeed({config.seed, 1, static_cast<std::uint64_t>(i)}));
    Draw(eval.samples[i], config.image_size, rng, config);
  }
  return {std::move(train), std::move(eval)};
}

std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions,
                           std::uint64_t seed) {
  if (fractions.empty()) throw InvalidArgument("split: no fractions");
  double total = 0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidArgument("split: negative fraction");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw InvalidArgument("split: fractions must sum to 1");
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.Shuffle(order.begin(), order.end());
  std::vector<Dataset> parts(fractions.size());
  double cum = 0;
  std::size_t start = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    cum += fractions[p];
    const std::size_t end =
        p + 1 == fractions.size() ? n : static_cast<std::size_t>(std::llround(cum * n));
    if (end <= start) {
      throw InvalidArgument("split: partition " + std::to_string(p) + " would be empty (" +
                            std::to_string(n) + " samples)");
    }
    std::vector<std::size_t> members(order.begin() + start, order.begin() + end);
    std::sort(members.begin(), members.end());
    for (std::size_t i : members) parts[p].samples.push_back(data.samples[i]);
    start = end;
  }
  return parts;
}

void write_container(std::ostream& out, const AnyTensor& tensor) {
  std::visit(
      [&out](const auto& t) {
        using Elem = std::decay_t<decltype(t[0])>;
        DType dtype = std::is_same_v<Elem, float>    ? DType::kFloat32
                      : std::is_same_v<Elem, double> ? DType::kFloat64
                                                     : DType::kU8;
        out.write(kMagic, 4);
        const std::uint8_t header[3] = {kVersion, static_cast<std::uint8_t>(dtype), 4};
        out.write(reinterpret_cast<const char*>(header), 3);
        const Shape s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) {
          const std::uint32_t v = static_cast<std::uint32_t>(d);
          out.write(reinterpret_cast<const char*>(&v), 4);
        }
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(Elem)));
      },
      tensor);
  if (!out) throw ContainerError(ContainerError::Kind::kIo, "container write failed");
}

AnyTensor read_container(std::istream& in) {
  using Kind = ContainerError::Kind;
  char magic[4];
  if (!in.read(magic, 4)) throw ContainerError(Kind::kTruncated, "truncated header (magic)");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ContainerError(Kind::kBadMagic, "bad magic: not an LPNT container");
  }
  std::uint8_t header[3];
  if (!in.read(reinterpret_cast<char*>(header), 3)) {
    throw ContainerError(Kind::kTruncated, "truncated header");
  }
  if (header[0] != kVersion) {
    throw ContainerError(Kind::kBadVersion, "unsupported version " + std::to_string(header[0]));
  }
  if (header[1] > 2) {
    throw ContainerError(Kind::kUnknownDtype, "unknown dtype code " + std::to_string(header[1]));
  }
  const DType dtype = static_cast<DType>(header[1]);
  const int rank = header[2];
  if (rank > 4) {
    throw ContainerError(Kind::kCorruptHeader, "rank " + std::to_string(rank) + " exceeds 4");
  }
  std::array<int, 4> dims{1, 1, 1, 1};
  for (int i = 0; i < rank; ++i) {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) {
      throw ContainerError(Kind::kTruncated, "truncated header (dims)");
    }
    if (v > 0x7fffffffu) throw ContainerError(Kind::kCorruptHeader, "dimension too large");
    dims[4 - rank + i] = static_cast<int>(v);
  }
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t bytes = shape.numel() * DtypeSize(dtype);
  auto fill = [&](auto tensor) -> AnyTensor {
    if (bytes > 0 && !in.read(reinterpret_cast<char*>(tensor.data()),
                              static_cast<std::streamsize>(bytes))) {
      throw ContainerError(Kind::kTruncated,
                           "truncated payload: expected " + std::to_string(bytes) + " bytes");
    }
    return tensor;
  };
  switch (dtype) {
    case DType::kFloat32: return fill(Tensor<float>(shape));
    case DType::kFloat64: return fill(Tensor<double>(shape));
    default: return fill(Labels(shape));
  }
}

void save_container(const std::filesystem::path& path, const AnyTensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ContainerError(ContainerError::Kind::kIo, "cannot open " + path.string());
  }
  write_container(out, tensor);
}

AnyTensor load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ContainerError(ContainerError::Kind::kIo, "cannot open " + path.string());
  }
  AnyTensor t = read_container(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ContainerError(ContainerError::Kind::kTrailingBytes,
                         "trailing bytes after payload in " + path.string());
  }
  return t;
}

template <typename T>
Tensor<T> load_container_as(const std::filesystem::path& path) {
  AnyTensor t = load_container(path);
  if (auto* v = std::get_if<Tensor<T>>(&t)) return std::move(*v);
  throw ContainerError(ContainerError::Kind::kDtypeMismatch,
                       "unexpected dtype in " + path.string());
}

template Tensor<float> load_container_as(const std::filesystem::path&);
template Tensor<double> load_container_as(const std::filesystem::path&);
template Labels load_container_as(const std::filesystem::path&);

void save_dataset_dir(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream index(dir / "index.txt", std::ios::trunc);
  if (!index) throw IoError("cannot write " + (dir / "index.txt").string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.lpnt", i);
    save_container(dir / "images" / name, data.samples[i].image);
    save_container(dir / "masks" / name, data.samples[i].mask);
    index << "images/" << name << ' ' << "masks/" << name << '\n';
  }
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.txt");
  if (!index) throw IoError("missing " + (dir / "index.txt").string());
  Dataset data;
  std::string line;
  int line_no = 0;
  while (std::getline(index, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string image, mask;
    if (!(ls >> image >> mask)) {
      throw IoError("index.txt line " + std::to_string(line_no) + ": expected two paths");
    }
    Sample s;
    s.image = load_container_as<float>(dir / image);
    s.mask = load_container_as<std::uint8_t>(dir / mask);
    if (s.image.shape().n != 1 || s.mask.shape().h != s.image.shape().h ||
        s.mask.shape().w != s.image.shape().w) {
      throw IoError("sample " + image + ": image/mask shapes disagree");
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace lpnas
