/* Copyright 2026 The cdnn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdnn/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cdnn/error.h"

namespace cdnn {

ParseError::ParseError(const std::string& message, std::size_t line,
                       std::size_t column)
    : Error(line == 0 ? message
                      : "line " + std::to_string(line) + ":" +
                            std::to_string(column) + ": " + message),
      message_(message),
      line_(line),
      column_(column) {}

std::int64_t NumElements(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

namespace {

void CheckShape(const Shape& shape) {
  if (shape.size() > kMaxTensorRank) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) +
                     " exceeds " + std::to_string(kMaxTensorRank));
  }
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + ShapeToString(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  CheckShape(shape_);
  data_.assign(static_cast<std::size_t>(NumElements(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  CheckShape(shape_);
  if (static_cast<std::int64_t>(data_.size()) != NumElements(shape_)) {
    throw ShapeError("tensor of shape " + ShapeToString(shape_) + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("cannot reshape " + ShapeToString(shape_) + " to " +
                     ShapeToString(shape));
  }
  return Tensor(std::move(shape), data_);
}

float UniformFromBits(std::uint64_t bits) {
  // 24 random mantissa bits -> [0, 1), then affine to [-1, 1).
  const double unit = static_cast<double>(bits >> 40) * (1.0 / 16777216.0);
  return static_cast<float>(2.0 * unit - 1.0);
}

Tensor RandomTensor(const Shape& shape, std::mt19937_64& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = UniformFromBits(rng());
  return t;
}

double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot compare " + ShapeToString(a.shape()) + " with " +
                     ShapeToString(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

}  // namespace cdnn
