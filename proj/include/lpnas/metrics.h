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

#ifndef LPNAS_METRICS_H_
#define LPNAS_METRICS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "lpnas/tape.h"
#include "lpnas/tensor.h"

namespace lpnas {

inline constexpr int kIgnoreLabel = 255;

// Label maps use shape (N, 1, H, W).
using Labels = Tensor<std::uint8_t>;

// Per-pixel argmax over channels; ties resolve to the lower class index.
template <typename T>
Labels ArgmaxLabels(const Tensor<T>& logits);

// Streams per-image confusion counts. The reported mIoU is the mean over
// images of each image's mean IoU across classes with a non-empty union.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_classes = 2, int ignore_label = kIgnoreLabel,
                                double empty_image_score = 1.0);

  void AddImage(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> target);
  // Every image of an (N, 1, H, W) batch.
  void Add(const Labels& pred, const Labels& target);
  // Appends `other`'s images after this accumulator's.
  void Merge(const ConfusionAccumulator& other);

  double MeanIoU() const;
  int images() const { return static_cast<int>(per_image_.size()); }
  const std::vector<std::int64_t>& intersection() const { return intersection_; }
  const std::vector<std::int64_t>& union_count() const { return union_; }
  const std::vector<std::int64_t>& valid_pixels() const { return valid_; }
  const std::vector<double>& per_image() const { return per_image_; }

 private:
  int num_classes_;
  int ignore_label_;
  double empty_image_score_;
  std::vector<std::int64_t> intersection_;
  std::vector<std::int64_t> union_;
  std::vector<std::int64_t> valid_;
  std::vector<double> per_image_;
};

// Batch mIoU of two label maps of identical shape.
double miou(const Labels& pred, const Labels& target, int ignore_label = kIgnoreLabel);

// Mean pixelwise softmax cross-entropy over pixels whose target is not
// `ignore_label`. Throws InvalidArgument when every pixel is ignored.
template <typename T>
Var<T> segmentation_loss(Var<T> logits, const Labels& target,
                         int ignore_label = kIgnoreLabel);

}  // namespace lpnas

#endif  // LPNAS_METRICS_H_
