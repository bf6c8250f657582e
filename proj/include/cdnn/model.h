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

// Layer and model data model, the model description text format, and
// shape/parameter arithmetic.
//
// Model description documents look like:
//
//   model toy
//   input 16x16x3
//   conv2d k=8 f=3 s=1 pad=same
//   relu
//   maxpool w=2 s=2
//   flatten
//   dense out=64 bias=1
//   opaque latency=0.18 mem=12MB
//
// Layers that consume a spatial input take their input extents from the
// preceding layer, so only the output-side hyperparameters are written.

#ifndef CDNN_MODEL_H_
#define CDNN_MODEL_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cdnn/tensor.h"

namespace cdnn {

enum class PaddingKind { kSame, kValid, kExplicit };

struct Padding {
  PaddingKind kind = PaddingKind::kSame;
  std::int64_t amount = 0;  // only for kExplicit

  // Zero padding on each side for a kernel extent of `kernel`.
  std::int64_t For(std::int64_t kernel) const;
  bool operator==(const Padding&) const = default;
};

struct DenseLayer {
  std::int64_t input_dim = 0;
  std::int64_t output_dim = 0;
  bool has_bias = false;
  bool operator==(const DenseLayer&) const = default;
};

struct Conv2DLayer {
  std::int64_t h_in = 0;
  std::int64_t w_in = 0;
  std::int64_t c_in = 0;
  std::int64_t filters = 0;  // k
  std::int64_t kernel = 0;   // f, square
  std::int64_t stride = 1;
  Padding padding;
  bool has_bias = false;

  std::int64_t h_out() const;
  std::int64_t w_out() const;
  bool operator==(const Conv2DLayer&) const = default;
};

struct Conv3DLayer {
  std::int64_t d_in = 0;
  std::int64_t h_in = 0;
  std::int64_t w_in = 0;
  std::int64_t c_in = 0;
  std::int64_t filters = 0;
  std::int64_t kernel = 0;        // spatial extent
  std::int64_t kernel_depth = 0;  // extent along the depth (time) axis
  std::int64_t stride = 1;
  Padding padding;
  bool has_bias = false;

  std::int64_t d_out() const;
  std::int64_t h_out() const;
  std::int64_t w_out() const;
  bool operator==(const Conv3DLayer&) const = default;
};

enum class PoolKind { kMax, kAvg };

struct Pool2DLayer {
  PoolKind kind = PoolKind::kMax;
  std::int64_t window = 2;
  std::int64_t stride = 2;
  bool operator==(const Pool2DLayer&) const = default;
};

enum class ActivationKind { kReLU, kSigmoid, kIdentity };

struct ActivationLayer {
  ActivationKind kind = ActivationKind::kReLU;
  bool operator==(const ActivationLayer&) const = default;
};

struct FlattenLayer {
  bool operator==(const FlattenLayer&) const = default;
};

// Black-box block (e.g. a residual block) described only by its measured
// latency and memory. Shape preserving.
struct OpaqueLayer {
  double latency_s = 0.0;
  std::int64_t mem_bytes = 0;
  bool operator==(const OpaqueLayer&) const = default;
};

using LayerSpec = std::variant<DenseLayer, Conv2DLayer, Conv3DLayer,
                               Pool2DLayer, ActivationLayer, FlattenLayer,
                               OpaqueLayer>;

struct ModelGraph {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;
};

// Parses and validates a model description document.
ModelGraph ParseModel(std::string_view text);
ModelGraph LoadModel(const std::string& path);
// Inverse of ParseModel; ParseModel(FormatModel(g)) reproduces g.
std::string FormatModel(const ModelGraph& graph);

// Checks the invariants of a single layer (positive counts, odd kernels under
// same padding). Throws InvalidArgument.
void ValidateLayer(const LayerSpec& layer);

// Output shape of `layer` applied to `input`. Throws ShapeError when the input
// does not match what the layer expects or a dimension becomes non-positive.
Shape LayerOutputShape(const LayerSpec& layer, const Shape& input);

// Output shape of every layer in order.
std::vector<Shape> InferShapes(const ModelGraph& graph);

// Input shape of every layer in order (element 0 is the model input).
std::vector<Shape> LayerInputShapes(const ModelGraph& graph);

// Output extent of a convolution axis: floor((i + 2p - f) / s) + 1.
std::int64_t ConvOutputExtent(std::int64_t in, std::int64_t kernel,
                              std::int64_t stride, std::int64_t pad);

std::int64_t ParamCount(const LayerSpec& layer);
std::int64_t ParamCount(const ModelGraph& graph);

// Layers that own weights (dense and convolutions).
bool HasWeights(const LayerSpec& layer);
// Dense, convolution and opaque layers anchor a planning unit; activations,
// pooling and flatten ride along with the layer before them.
bool IsAnchorLayer(const LayerSpec& layer);

std::string LayerKindName(const LayerSpec& layer);
// One-line description, e.g. "conv2d 128x128x64 k=128 f=3 s=1 pad=same".
// Identical layers have identical signatures.
std::string LayerSignature(const LayerSpec& layer);
// The layer as it would appear in a model description document.
std::string FormatLayer(const LayerSpec& layer);

// Parses "512", "12KB", "256MB", "1GB" (powers of 1024).
std::int64_t ParseByteSize(std::string_view text);

}  // namespace cdnn

#endif  // CDNN_MODEL_H_
