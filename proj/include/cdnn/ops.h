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

// Reference executor for every layer kind. Naive loops with a fixed
// accumulation order (input index ascending) and a double accumulator per
// output element, so results are reproducible and serve as the ground truth
// for split/merge equivalence.

#ifndef CDNN_OPS_H_
#define CDNN_OPS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cdnn/model.h"
#include "cdnn/tensor.h"

namespace cdnn {

// Kernel layouts: dense d_i x d_o; conv2d f x f x C_i x k;
// conv3d fd x f x f x C_i x k. Bias has length d_o (or k).
struct LayerWeights {
  Tensor kernel;
  std::optional<Tensor> bias;
};

// One entry per layer; layers without weights hold an empty kernel.
using ModelWeights = std::vector<LayerWeights>;

// Zero padding on each side of the spatial axes.
struct Pad2D {
  std::int64_t top = 0;
  std::int64_t bottom = 0;
  std::int64_t left = 0;
  std::int64_t right = 0;
  static Pad2D Uniform(std::int64_t p) { return {p, p, p, p}; }
  bool operator==(const Pad2D&) const = default;
};

Tensor DenseForward(const Tensor& x, const Tensor& w,
                    const std::optional<Tensor>& bias = std::nullopt);

Tensor Conv2DForward(const Tensor& x, const Tensor& filters,
                     std::int64_t stride, const Padding& padding,
                     const std::optional<Tensor>& bias = std::nullopt);
// Per-side padding; used by spatial shards whose borders are either real
// image borders (zero padded) or interior cuts (no padding).
Tensor Conv2DForward(const Tensor& x, const Tensor& filters,
                     std::int64_t stride, const Pad2D& pad,
                     const std::optional<Tensor>& bias = std::nullopt);

Tensor Conv3DForward(const Tensor& x, const Tensor& filters,
                     std::int64_t stride, const Padding& padding,
                     const std::optional<Tensor>& bias = std::nullopt);

Tensor PoolForward(const Tensor& x, PoolKind kind, std::int64_t window,
                   std::int64_t stride);

float Activate(ActivationKind kind, float v);
Tensor ActivationForward(const Tensor& x, ActivationKind kind);

// Runs one layer. `weights` is ignored for layers without weights.
Tensor LayerForward(const LayerSpec& layer, const Tensor& x,
                    const LayerWeights& weights);

// Folds LayerForward over layers [first, last] inclusive.
Tensor RangeForward(const ModelGraph& graph, const ModelWeights& weights,
                    std::size_t first, std::size_t last, Tensor x);
Tensor ModelForward(const ModelGraph& graph, const ModelWeights& weights,
                    const Tensor& x);

// Deterministic random weights for one layer; layer i of a model draws from
// a generator seeded by (seed, i), so any process can rebuild any layer.
LayerWeights MakeLayerWeights(const LayerSpec& layer, std::uint64_t seed,
                              std::size_t layer_index);
ModelWeights MakeModelWeights(const ModelGraph& graph, std::uint64_t seed);

// Kernel shape expected by LayerForward (empty for layers without weights).
Shape KernelShape(const LayerSpec& layer);

}  // namespace cdnn

#endif  // CDNN_OPS_H_
