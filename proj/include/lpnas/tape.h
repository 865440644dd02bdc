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

#ifndef LPNAS_TAPE_H_
#define LPNAS_TAPE_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <vector>

#include "lpnas/error.h"
#include "lpnas/tensor.h"

namespace lpnas {

template <typename T>
class Tape;

// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order, so every input
// id is smaller than its consumer's id and backward is a reverse sweep.
// A tape is single-writer; separate tapes share nothing.
template <typename T>
class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is complete;
  // must accumulate into the gradients of that node's inputs.
  using BackwardFn = std::function<void(Tape<T>&, int)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> Constant(Tensor<T> value) {
    return Push(std::move(value), false, nullptr, {});
  }

  // Differentiable leaf that is not a Parameter (e.g. an input under test).
  Var<T> Leaf(Tensor<T> value) {
    return Push(std::move(value), grad_enabled_, nullptr, {});
  }

  Var<T> Param(Parameter<T>& p) {
    return Push(p.value, grad_enabled_, &p, {});
  }

  Var<T> Record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    }
    return Push(std::move(value), needs, nullptr, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of node `id`, allocated as zeros on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  bool has_grad(int id) const {
    return nodes_[id].grad.size() == nodes_[id].value.size() &&
           !nodes_[id].value.empty();
  }

  std::size_t size() const { return nodes_.size(); }

  // Populates the gradient of every node reachable from `loss` and adds
  // parameter-leaf gradients into Parameter::grad.
  void Backward(Var<T> loss) {
    if (loss.valid() && &loss.tape() != this) {
      throw TapeError("backward: loss recorded on a different tape");
    }
    if (backward_done_) {
      throw TapeError("backward called twice without Reset()");
    }
    if (nodes_.empty()) throw TapeError("backward on an empty tape");
    if (loss.value().size() != 1) {
      throw TapeError("backward: loss must be a scalar, got shape " +
                      loss.shape().ToString());
    }
    backward_done_ = true;
    grad(loss.id())[0] = T{1};
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !has_grad(id)) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param != nullptr) {
        auto& dst = n.param->grad;
        const auto& src = n.grad;
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      }
    }
  }

  void Reset() {
    nodes_.clear();
    backward_done_ = false;
    min_kink_distance_ = std::numeric_limits<double>::infinity();
  }

  // Kink tracking: non-smooth ops report how close their inputs came to a
  // point of non-differentiability. Used to reject finite-difference probes.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool track_kinks() const { return track_kinks_; }
  void NoteKinkDistance(double d) {
    min_kink_distance_ = std::min(min_kink_distance_, d);
  }
  double min_kink_distance() const { return min_kink_distance_; }

  double MaxAbsValue() const {
    double m = 0.0;
    for (const auto& n : nodes_) {
      for (T v : n.value.vec()) {
        const double a = std::fabs(static_cast<double>(v));
        if (!(a <= m)) m = a;  // NaN sticks
      }
    }
    return m;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> Push(Tensor<T> value, bool requires_grad, Parameter<T>* param,
              BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  bool grad_enabled_;
  bool backward_done_ = false;
  bool track_kinks_ = false;
  double min_kink_distance_ = std::numeric_limits<double>::infinity();
  std::vector<Node> nodes_;
};

}  // namespace lpnas

#endif  // LPNAS_TAPE_H_
