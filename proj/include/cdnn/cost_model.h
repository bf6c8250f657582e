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

// Closed-form work, memory and traffic counts for a layer, whole or split,
// and a latency estimate on a device profile.
//
// Counts are in elements. Per-node figures describe the largest shard, so
// they are exact for even divisions and the ceiling otherwise. A division
// that yields a single node costs the same as the unsplit layer.

#ifndef CDNN_COST_MODEL_H_
#define CDNN_COST_MODEL_H_

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cdnn/model.h"
#include "cdnn/splitter.h"

namespace cdnn {

struct LayerCost {
  std::int64_t nodes = 1;
  std::int64_t mults_per_node = 0;
  std::int64_t reductions_per_node = 0;
  std::int64_t weights_per_node = 0;
  // Elements moved per inference: inputs to every shard plus every shard
  // output to the merge point.
  std::int64_t comm_total_elems = 0;
  std::int64_t comm_in_per_node = 0;
  std::int64_t comm_out_per_node = 0;
  // Additions (sum merges) or element copies (concatenations) at the merge.
  std::int64_t merge_cost = 0;
  // Weight elements shipped once when the plan is deployed.
  std::int64_t setup_elems = 0;
  std::int64_t messages = 0;
  // Opaque layers carry a measured time and memory instead of counts.
  double fixed_compute_s = 0.0;
  std::int64_t fixed_mem_bytes = 0;

  bool operator==(const LayerCost&) const = default;
};

struct DeviceProfile {
  double mult_rate = 5e8;    // multiplications per second
  double reduce_rate = 5e8;  // additions per second
  std::int64_t mem_bytes = std::int64_t{1} << 30;
  double swap_factor = 4.0;  // compute slowdown once the footprint exceeds mem
  std::int64_t bytes_per_element = 4;
  bool operator==(const DeviceProfile&) const = default;
};

struct LinkProfile {
  double bandwidth_bps = 94.1e6;
  double latency_s = 0.4e-3;  // per message
  bool operator==(const LinkProfile&) const = default;
};

std::pair<std::int64_t, std::int64_t> ConvMultsReductions(
    std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t k,
    std::int64_t f);

LayerCost DenseCost(std::int64_t d_i, std::int64_t d_o,
                    const std::optional<SplitMethod>& method = std::nullopt);

// Cost of any layer, unsplit or under `method`. Activation, pooling and
// flatten layers have only reductions (one per element touched) and need
// `input_shape`; dense and convolution layers carry their own geometry.
LayerCost ComputeLayerCost(
    const LayerSpec& layer, const Shape& input_shape,
    const std::optional<SplitMethod>& method = std::nullopt);
LayerCost ComputeLayerCost(
    const LayerSpec& layer,
    const std::optional<SplitMethod>& method = std::nullopt);

// Bytes a node needs: its weights plus input and output activations, or the
// opaque layer's stated memory.
std::int64_t FootprintBytes(const LayerCost& cost, const DeviceProfile& dev);

struct LatencyBreakdown {
  double compute_s = 0.0;  // critical shard, swap applied
  double merge_s = 0.0;
  double comm_s = 0.0;
  bool swapped = false;
  double total() const { return compute_s + merge_s + comm_s; }
};

LatencyBreakdown EstimateLatencyBreakdown(const LayerCost& cost,
                                          const DeviceProfile& dev,
                                          const LinkProfile& link);
double EstimateLatency(const LayerCost& cost, const DeviceProfile& dev,
                       const LinkProfile& link);

// Compute seconds for the given counts without any memory penalty.
double ComputeSeconds(std::int64_t mults, std::int64_t reductions,
                      const DeviceProfile& dev);
// Seconds to move `elems` elements in `messages` messages over `link`.
double TransferSeconds(std::int64_t elems, std::int64_t messages,
                       const DeviceProfile& dev, const LinkProfile& link);

// W / (W/n + overhead).
double SpeedupEstimate(double work_s, std::int64_t nodes, double overhead_s);

// The closed-form per-node input estimate for a d x d spatial split:
// H*W*C/d^2 + 4*floor(f/2)*(d^2 - d). Approximate; see SpatialInputElemsExact.
double SpatialInputElemsPaper(std::int64_t h, std::int64_t w, std::int64_t c,
                              std::int64_t f, std::int64_t d);
// Sum over all grid cells of the exact halo rectangle area, times C.
std::int64_t SpatialInputElemsExact(std::int64_t h, std::int64_t w,
                                    std::int64_t c, std::int64_t f,
                                    std::int64_t parts_y,
                                    std::int64_t parts_x);

struct CalibrationSample {
  LayerCost cost;
  double measured_compute_s = 0.0;
};

// Least-squares fit of the multiplication and reduction rates to measured
// compute times; other fields are copied from `base`. Throws
// InvalidArgument when the samples do not determine positive rates.
DeviceProfile CalibrateProfile(const DeviceProfile& base,
                               const std::vector<CalibrationSample>& samples);

}  // namespace cdnn

#endif  // CDNN_COST_MODEL_H_
