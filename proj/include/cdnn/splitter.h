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

// Model-parallel transforms of a single layer. A split produces one Shard per
// node (what input it reads, which weights it holds, what it computes) and a
// MergeOp that reassembles the shard outputs into the layer output.
//
//   method      layers          shards        merge
//   output[n]   dense           n             concat
//   input[n]    dense           n             sum
//   channel[k'] conv2d, conv3d  ceil(k/k')    concat along channels
//   spatial[YxX] conv2d         Y*X           concat on the grid
//   filter[Cb]  conv2d, conv3d  ceil(C/Cb)    sum
//
// Uneven divisions give earlier shards the larger part.

#ifndef CDNN_SPLITTER_H_
#define CDNN_SPLITTER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cdnn/model.h"
#include "cdnn/ops.h"
#include "cdnn/tensor.h"

namespace cdnn {

struct DenseOutputSplit {
  std::int64_t nodes = 1;
  bool operator==(const DenseOutputSplit&) const = default;
};
struct DenseInputSplit {
  std::int64_t nodes = 1;
  bool operator==(const DenseInputSplit&) const = default;
};
struct ConvChannelSplit {
  std::int64_t filters_per_node = 1;  // k'
  bool operator==(const ConvChannelSplit&) const = default;
};
struct ConvSpatialSplit {
  std::int64_t parts_y = 1;
  std::int64_t parts_x = 1;
  bool operator==(const ConvSpatialSplit&) const = default;
};
struct ConvFilterSplit {
  std::int64_t channels_per_batch = 1;  // C_b
  bool operator==(const ConvFilterSplit&) const = default;
};

using SplitMethod = std::variant<DenseOutputSplit, DenseInputSplit,
                                 ConvChannelSplit, ConvSpatialSplit,
                                 ConvFilterSplit>;

// "output", "input", "channel", "spatial" or "filter".
std::string SplitMethodName(const SplitMethod& method);
// "output[2]", "channel[43]", "spatial[2x2]", ...
std::string FormatSplitMethod(const SplitMethod& method);
SplitMethod ParseSplitMethod(std::string_view text);

// The division factor as written in the method (n, k', Y*X or C_b).
std::int64_t SplitFactor(const SplitMethod& method);
// Number of shards the method produces on `layer`.
std::int64_t SplitNodeCount(const SplitMethod& method, const LayerSpec& layer);
// Whether `method` can be applied to `layer` at all (ignoring the degree).
bool SplitApplies(const SplitMethod& method, const LayerSpec& layer);

// Every method producing exactly `nodes` shards on `layer`, in the order
// output, channel, spatial (all factorizations, more rows first), input,
// filter. Channel and filter use k' = ceil(k/nodes) and C_b = ceil(C/nodes)
// and are omitted when that does not yield `nodes` shards.
std::vector<SplitMethod> SplitsWithNodeCount(const LayerSpec& layer,
                                             std::int64_t nodes);

// Half-open index interval.
struct IndexRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

// Splits [0, total) into `parts` contiguous ranges; the first total % parts
// ranges are one longer.
std::vector<IndexRange> BalancedRanges(std::int64_t total, std::int64_t parts);

struct FullInput {
  bool operator==(const FullInput&) const = default;
};
// Elements [begin, end) of a rank-1 input.
struct RowRange {
  IndexRange rows;
  bool operator==(const RowRange&) const = default;
};
// Rows [y0, y1) and columns [x0, x1) of an H x W x C input, all channels.
struct SpatialRect {
  std::int64_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  std::int64_t height() const { return y1 - y0; }
  std::int64_t width() const { return x1 - x0; }
  bool operator==(const SpatialRect&) const = default;
};
// Channels [begin, end) (last axis) of a spatial input.
struct ChannelRange {
  IndexRange channels;
  bool operator==(const ChannelRange&) const = default;
};

using InputSelector =
    std::variant<FullInput, RowRange, SpatialRect, ChannelRange>;

// Portion of the parent weights held by one shard. `in` indexes the kernel's
// input axis (d_i or C_i), `out` its output axis (d_o or k).
struct WeightSlice {
  IndexRange in;
  IndexRange out;
  bool includes_bias = false;
  std::int64_t element_count = 0;  // kernel slice plus bias slice
};

struct Shard {
  std::int64_t node_index = 0;
  // Layers the shard runs, in order. A single reduced layer except for
  // chained spatial shards.
  std::vector<LayerSpec> tasks;
  InputSelector input;
  // Same slice for every task of a chained spatial shard.
  WeightSlice weights;
  // Spatial shards only: per-task zero padding (borders padded, interior
  // cuts not).
  std::vector<Pad2D> paddings;
  // Activation applied to the shard output before it is sent.
  std::optional<ActivationKind> activation;
  Shape output_shape;
};

enum class MergeKind { kConcat, kConcatGrid, kSum };

struct MergeOp {
  MergeKind kind = MergeKind::kConcat;
  // kConcat joins along the last axis. kConcatGrid places row-major cells of
  // a grid_y x grid_x grid along the two leading axes.
  std::int64_t grid_y = 1;
  std::int64_t grid_x = 1;
  std::optional<ActivationKind> activation_after_merge;
};

struct SplitPlan {
  std::vector<Shard> shards;
  MergeOp merge;
  Shape output_shape;
};

// Splits one layer. `activation`, if set, is the activation that follows the
// layer; it is applied on each shard when the merge is a concatenation and
// after the merge when it is a sum. Throws InvalidArgument when the method
// does not apply or the degree exceeds the split dimension.
SplitPlan SplitLayer(const LayerSpec& layer, const SplitMethod& method,
                     std::optional<ActivationKind> activation = std::nullopt);

// Spatially splits a run of stride-1 same-padded 2D convolutions (activation
// layers may sit between them) so each shard computes its output cell of the
// last layer without intermediate exchange. Halos grow with the summed
// kernel radii.
SplitPlan SplitSpatialChain(const std::vector<LayerSpec>& chain,
                            std::int64_t parts_y, std::int64_t parts_x);

// Input rectangle of grid cell (cell_y, cell_x) for a same-padded f x f
// convolution on an H x W input: the cell's base rectangle extended by
// floor(f/2) towards every neighbour, clipped to the input.
SpatialRect HaloRect(std::int64_t height, std::int64_t width,
                     std::int64_t kernel, std::int64_t parts_y,
                     std::int64_t parts_x, std::int64_t cell_y,
                     std::int64_t cell_x);

// Elements of `x` selected by the shard's selector.
Tensor ShardInput(const Tensor& x, const Shard& shard);

// Slices the parent weights (one entry per shard task) down to the shard.
std::vector<LayerWeights> ShardWeights(
    const Shard& shard, const std::vector<LayerWeights>& parent);

// Runs a shard on its selected input with already sliced weights.
Tensor RunShard(const Shard& shard, const std::vector<LayerWeights>& weights,
                const Tensor& input);

// Partials must be ordered by node index.
Tensor MergeOutputs(const std::vector<Tensor>& partials, const MergeOp& merge);

// Runs split, select, shard execution and merge on random inputs and
// weights; returns the largest deviation from the unsplit layer.
double VerifySplit(const LayerSpec& layer, const SplitMethod& method,
                   int trials, std::uint64_t seed,
                   std::optional<ActivationKind> activation = std::nullopt);
double VerifySpatialChain(const std::vector<LayerSpec>& chain,
                          std::int64_t parts_y, std::int64_t parts_x,
                          int trials, std::uint64_t seed);

}  // namespace cdnn

#endif  // CDNN_SPLITTER_H_
