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

#ifndef LPNAS_ERROR_H_
#define LPNAS_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lpnas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; `dimension` names the offending axis
// ("N", "C", "H", "W", or an operator-specific role such as "kernel").
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::string dimension, const std::string& detail)
      : Error(op + ": mismatch in " + dimension + ": " + detail),
        op_(std::move(op)),
        dimension_(std::move(dimension)) {}

  const std::string& op() const { return op_; }
  const std::string& dimension() const { return dimension_; }

 private:
  std::string op_;
  std::string dimension_;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (double backward, non-scalar loss, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Genotype string does not match the grammar. `position` is a 0-based
// character offset into the input.
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& message)
      : Error("syntax error at position " + std::to_string(position) + ": " +
              message),
        position_(position) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Well-formed genotype that violates a structural constraint.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(Join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string Join(const std::vector<std::string>& v) {
    std::string out = "validation failed:";
    for (const auto& s : v) out += " " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, int batch, double max_abs_activation)
      : Error("non-finite loss at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch) +
              " (max |activation| = " + std::to_string(max_abs_activation) +
              ")"),
        epoch_(epoch),
        batch_(batch),
        max_abs_activation_(max_abs_activation) {}

  int epoch() const { return epoch_; }
  int batch() const { return batch_; }
  double max_abs_activation() const { return max_abs_activation_; }

 private:
  int epoch_;
  int batch_;
  double max_abs_activation_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lpnas

#endif  // LPNAS_ERROR_H_
