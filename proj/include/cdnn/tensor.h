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

#ifndef CDNN_TENSOR_H_
#define CDNN_TENSOR_H_

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cdnn {

using Shape = std::vector<std::int64_t>;

inline constexpr std::size_t kMaxTensorRank = 5;

std::int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

// Dense row-major array of 32-bit reals. Spatial tensors use H x W x C
// (and D x H x W x C for volumes); dense activations are rank 1.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Same data viewed under a new shape with the same element count.
  Tensor Reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Uniform values in [-1, 1) drawn from a 64-bit Mersenne twister. The float
// mapping is done by hand so the same seed yields the same tensor everywhere.
float UniformFromBits(std::uint64_t bits);
Tensor RandomTensor(const Shape& shape, std::mt19937_64& rng);

// Largest absolute element-wise difference; throws ShapeError if the shapes
// differ.
double MaxAbsDiff(const Tensor& a, const Tensor& b);

}  // namespace cdnn

#endif  // CDNN_TENSOR_H_
