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

#include "lpnas/metrics.h"

#include <cmath>
#include <string>

#include "lpnas/error.h"

namespace lpnas {

template <typename T>
Labels ArgmaxLabels(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  Labels out(Shape{s.n, 1, s.h, s.w});
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const T* base = logits.data() + static_cast<std::size_t>(n) * s.c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      int best = 0;
      T best_v = base[i];
      for (int c = 1; c < s.c; ++c) {
        const T v = base[c * hw + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[static_cast<std::size_t>(n) * hw + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

ConfusionAccumulator::ConfusionAccumulator(int num_classes, int ignore_label,
                                           double empty_image_score)
    : num_classes_(num_classes),
      ignore_label_(ignore_label),
      empty_image_score_(empty_image_score),
      intersection_(num_classes, 0),
      union_(num_classes, 0),
      valid_(num_classes, 0) {
  if (num_classes < 1) throw InvalidArgument("num_classes must be >= 1");
}

void ConfusionAccumulator::AddImage(std::span<const std::uint8_t> pred,
                                    std::span<const std::uint8_t> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("miou", "numel",
                     std::to_string(pred.size()) + " vs " + std::to_string(target.size()));
  }
  std::vector<std::int64_t> inter(num_classes_, 0), pred_n(num_classes_, 0),
      tgt_n(num_classes_, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int t = target[i];
    if (t == ignore_label_) continue;
    const int p = pred[i];
    if (t >= num_classes_ || (p >= num_classes_ && p != ignore_label_)) {
      throw InvalidArgument("label out of range at pixel " + std::to_string(i));
    }
    ++tgt_n[t];
    if (p == ignore_label_) continue;
    ++pred_n[p];
    if (p == t) ++inter[t];
  }
  double acc = 0.0;
  int included = 0;
  for (int c = 0; c < num_classes_; ++c) {
    const std::int64_t u = pred_n[c] + tgt_n[c] - inter[c];
    intersection_[c] += inter[c];
    union_[c] += u;
    valid_[c] += tgt_n[c];
    if (u == 0) continue;
    acc += static_cast<double>(inter[c]) / static_cast<double>(u);
    ++included;
  }
  per_image_.push_back(included == 0 ? empty_image_score_ : acc / included);
}

void ConfusionAccumulator::Add(const Labels& pred, const Labels& target) {
  if (!(pred.shape() == target.shape())) {
    throw ShapeError("miou", "shape", pred.shape().ToString() + " vs " + target.shape().ToString());
  }
  const Shape s = pred.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  for (int n = 0; n < s.n; ++n) {
    AddImage(pred.span().subspan(n * per, per), target.span().subspan(n * per, per));
  }
}

void ConfusionAccumulator::Merge(const ConfusionAccumulator& other) {
  if (other.num_classes_ != num_classes_) {
    throw InvalidArgument("cannot merge accumulators with different class counts");
  }
  for (int c = 0; c < num_classes_; ++c) {
    intersection_[c] += other.intersection_[c];
    union_[c] += other.union_[c];
    valid_[c] += other.valid_[c];
  }
  per_image_.insert(per_image_.end(), other.per_image_.begin(), other.per_image_.end());
}

double ConfusionAccumulator::MeanIoU() const {
  if (per_image_.empty()) throw InvalidArgument("mIoU of zero images");
  double s = 0.0;
  for (double v : per_image_) s += v;
  return s / static_cast<double>(per_image_.size());
}

double miou(const Labels& pred, const Labels& target, int ignore_label) {
  ConfusionAccumulator acc(2, ignore_label);
  acc.Add(pred, target);
  return acc.MeanIoU();
}

template <typename T>
Var<T> segmentation_loss(Var<T> logits, const Labels& target, int ignore_label) {
  const Shape s = logits.shape();
  const Shape ts = target.shape();
  if (ts.n != s.n || ts.h != s.h || ts.w != s.w || ts.c != 1) {
    throw ShapeError("segmentation_loss", "shape",
                     "logits " + s.ToString() + " vs target " + ts.ToString());
  }
  const std::size_t hw = s.plane();
  // Softmax probabilities are kept for backward.
  Tensor<T> prob(s);
  double total = 0.0;
  std::size_t count = 0;
  const T* x = logits.value().data();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      T m = x[base + i];
      for (int c = 1; c < s.c; ++c) m = std::max(m, x[base + c * hw + i]);
      T z = 0;
      for (int c = 0; c < s.c; ++c) {
        const T e = std::exp(x[base + c * hw + i] - m);
        prob[base + c * hw + i] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) prob[base + c * hw + i] /= z;
      const int t = target[static_cast<std::size_t>(n) * hw + i];
      if (t == ignore_label) continue;
      if (t >= s.c) throw InvalidArgument("target label " + std::to_string(t) + " >= classes");
      total += -(static_cast<double>(x[base + t * hw + i] - m) - std::log(static_cast<double>(z)));
      ++count;
    }
  }
  if (count == 0) {
    throw InvalidArgument("segmentation_loss: every pixel is ignored");
  }
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / static_cast<double>(count)));
  const int xid = logits.id();
  return logits.tape().Record(
      std::move(out), {logits},
      [xid, prob = std::move(prob), target, ignore_label, count](Tape<T>& t, int self) {
        const T g = t.grad(self)[0] / static_cast<T>(count);
        Tensor<T>& gx = t.grad(xid);
        const Shape s = gx.shape();
        const std::size_t hw = s.plane();
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>(n) * s.c * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const int lbl = target[static_cast<std::size_t>(n) * hw + i];
            if (lbl == ignore_label) continue;
            for (int c = 0; c < s.c; ++c) {
              const T onehot = c == lbl ? T(1) : T(0);
              gx[base + c * hw + i] += g * (prob[base + c * hw + i] - onehot);
            }
          }
        }
      });
}

template Labels ArgmaxLabels(const Tensor<float>&);
template Labels ArgmaxLabels(const Tensor<double>&);
template Var<float> segmentation_loss(Var<float>, const Labels&, int);
template Var<double> segmentation_loss(Var<double>, const Labels&, int);

}  // namespace lpnas
