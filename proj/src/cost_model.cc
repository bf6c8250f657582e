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

#include "cdnn/cost_model.h"

#include <Eigen/Dense>

#include "cdnn/error.h"

namespace cdnn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::int64_t CeilDiv(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Geometry shared by 2D and 3D convolutions; 2D has depth 1.
struct ConvGeom {
  std::int64_t in_pos = 0;   // input positions (D*H*W)
  std::int64_t out_pos = 0;  // output positions
  std::int64_t c = 0, k = 0;
  std::int64_t taps = 0;     // kernel positions per (c, k) pair
  bool bias = false;
};

LayerCost Unsplit(std::int64_t mults, std::int64_t reductions,
                  std::int64_t weights, std::int64_t in, std::int64_t out) {
  LayerCost c;
  c.mults_per_node = mults;
  c.reductions_per_node = reductions;
  c.weights_per_node = weights;
  c.comm_in_per_node = in;
  c.comm_out_per_node = out;
  c.comm_total_elems = in + out;
  c.setup_elems = weights;
  c.messages = 2;
  return c;
}

LayerCost ConvCost(const ConvGeom& g, const LayerSpec& layer,
                   const std::optional<SplitMethod>& method) {
  const std::int64_t bias = g.bias ? g.k : 0;
  const std::int64_t weights = g.taps * g.c * g.k + bias;
  LayerCost base = Unsplit(g.out_pos * g.k * g.c * g.taps, g.out_pos * g.k,
                           weights, g.in_pos * g.c, g.out_pos * g.k);
  if (!method) return base;
  // Validates applicability and degree.
  const SplitPlan plan = SplitLayer(layer, *method);
  const std::int64_t n = static_cast<std::int64_t>(plan.shards.size());
  if (n == 1) return base;

  LayerCost c;
  c.nodes = n;
  c.messages = 2 * n;
  c.setup_elems = 0;
  for (const auto& s : plan.shards) c.setup_elems += s.weights.element_count;
  const std::int64_t out_elems = g.out_pos * g.k;
  if (std::holds_alternative<ConvChannelSplit>(*method)) {
    const std::int64_t kmax = CeilDiv(g.k, n);
    c.mults_per_node = g.out_pos * kmax * g.c * g.taps;
    c.reductions_per_node = g.out_pos * kmax;
    c.weights_per_node = g.taps * g.c * kmax + (g.bias ? kmax : 0);
    c.comm_in_per_node = g.in_pos * g.c;
    c.comm_out_per_node = g.out_pos * kmax;
    c.comm_total_elems = n * g.in_pos * g.c + out_elems;
    c.merge_cost = out_elems;
  } else if (std::holds_alternative<ConvFilterSplit>(*method)) {
    const std::int64_t cmax = CeilDiv(g.c, n);
    c.mults_per_node = g.out_pos * g.k * cmax * g.taps;
    c.reductions_per_node = g.out_pos * g.k;
    c.weights_per_node = g.taps * cmax * g.k + bias;
    c.comm_in_per_node = g.in_pos * cmax;
    c.comm_out_per_node = out_elems;
    c.comm_total_elems = g.in_pos * g.c + n * out_elems;
    c.merge_cost = n * out_elems;
  } else {
    const auto& m = std::get<ConvSpatialSplit>(*method);
    const auto& conv = std::get<Conv2DLayer>(layer);
    const std::int64_t cell = CeilDiv(conv.h_in, m.parts_y) *
                              CeilDiv(conv.w_in, m.parts_x);
    std::int64_t max_in = 0, sum_in = 0;
    for (const auto& s : plan.shards) {
      const auto& r = std::get<SpatialRect>(s.input);
      max_in = std::max(max_in, r.height() * r.width() * g.c);
      sum_in += r.height() * r.width() * g.c;
    }
    c.mults_per_node = cell * g.k * g.c * g.taps;
    c.reductions_per_node = cell * g.k;
    c.weights_per_node = weights;
    c.comm_in_per_node = max_in;
    c.comm_out_per_node = cell * g.k;
    c.comm_total_elems = sum_in + out_elems;
    c.merge_cost = out_elems;
  }
  return c;
}

}  // namespace

std::pair<std::int64_t, std::int64_t> ConvMultsReductions(
    std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t k,
    std::int64_t f) {
  return {h * w * k * c * f * f, h * w * k};
}

LayerCost DenseCost(std::int64_t d_i, std::int64_t d_o,
                    const std::optional<SplitMethod>& method) {
  return ComputeLayerCost(DenseLayer{d_i, d_o, false}, method);
}

LayerCost ComputeLayerCost(const LayerSpec& layer,
                           const std::optional<SplitMethod>& method) {
  if (!HasWeights(layer) && !std::holds_alternative<OpaqueLayer>(layer)) {
    throw InvalidArgument(LayerKindName(layer) +
                          " cost needs the input shape");
  }
  return ComputeLayerCost(layer, Shape{}, method);
}

LayerCost ComputeLayerCost(const LayerSpec& layer, const Shape& input_shape,
                           const std::optional<SplitMethod>& method) {
  if (method && !HasWeights(layer)) {
    throw InvalidArgument("cannot split " + LayerKindName(layer));
  }
  return std::visit(
      Overloaded{
          [&](const DenseLayer& d) {
            const std::int64_t di = d.input_dim, dout = d.output_dim;
            const std::int64_t bias = d.has_bias ? dout : 0;
            LayerCost base = Unsplit(di * dout, dout, di * dout + bias, di, dout);
            if (!method) return base;
            const SplitPlan plan = SplitLayer(layer, *method);
            const std::int64_t n = static_cast<std::int64_t>(plan.shards.size());
            if (n == 1) return base;
            LayerCost c;
            c.nodes = n;
            c.messages = 2 * n;
            c.setup_elems = base.setup_elems;
            if (std::holds_alternative<DenseOutputSplit>(*method)) {
              const std::int64_t omax = CeilDiv(dout, n);
              c.mults_per_node = omax * di;
              c.reductions_per_node = omax;
              c.weights_per_node = di * omax + (d.has_bias ? omax : 0);
              c.comm_in_per_node = di;
              c.comm_out_per_node = omax;
              c.comm_total_elems = n * di + dout;
              c.merge_cost = dout;
            } else {
              const std::int64_t imax = CeilDiv(di, n);
              c.mults_per_node = imax * dout;
              c.reductions_per_node = dout * (imax - 1);
              c.weights_per_node = imax * dout + bias;
              c.comm_in_per_node = imax;
              c.comm_out_per_node = dout;
              c.comm_total_elems = di + n * dout;
              c.merge_cost = n * dout;
            }
            return c;
          },
          [&](const Conv2DLayer& l) {
            return ConvCost({l.h_in * l.w_in, l.h_out() * l.w_out(), l.c_in,
                             l.filters, l.kernel * l.kernel, l.has_bias},
                            layer, method);
          },
          [&](const Conv3DLayer& l) {
            return ConvCost(
                {l.d_in * l.h_in * l.w_in, l.d_out() * l.h_out() * l.w_out(),
                 l.c_in, l.filters, l.kernel * l.kernel * l.kernel_depth,
                 l.has_bias},
                layer, method);
          },
          [&](const Pool2DLayer& p) {
            const Shape out = LayerOutputShape(layer, input_shape);
            const std::int64_t n = NumElements(out);
            return Unsplit(0, n * p.window * p.window, 0,
                           NumElements(input_shape), n);
          },
          [&](const ActivationLayer&) {
            const std::int64_t n = NumElements(input_shape);
            return Unsplit(0, n, 0, n, n);
          },
          [&](const FlattenLayer&) {
            const std::int64_t n = NumElements(input_shape);
            return Unsplit(0, 0, 0, n, n);
          },
          [&](const OpaqueLayer& o) {
            const std::int64_t n =
                input_shape.empty() ? 0 : NumElements(input_shape);
            LayerCost c = Unsplit(0, 0, 0, n, n);
            c.fixed_compute_s = o.latency_s;
            c.fixed_mem_bytes = o.mem_bytes;
            return c;
          }},
      layer);
}

std::int64_t FootprintBytes(const LayerCost& cost, const DeviceProfile& dev) {
  if (cost.fixed_mem_bytes > 0) return cost.fixed_mem_bytes;
  return (cost.weights_per_node + cost.comm_in_per_node +
          cost.comm_out_per_node) *
         dev.bytes_per_element;
}

double ComputeSeconds(std::int64_t mults, std::int64_t reductions,
                      const DeviceProfile& dev) {
  return static_cast<double>(mults) / dev.mult_rate +
         static_cast<double>(reductions) / dev.reduce_rate;
}

double TransferSeconds(std::int64_t elems, std::int64_t messages,
                       const DeviceProfile& dev, const LinkProfile& link) {
  return static_cast<double>(elems * dev.bytes_per_element) * 8.0 /
             link.bandwidth_bps +
         static_cast<double>(messages) * link.latency_s;
}

LatencyBreakdown EstimateLatencyBreakdown(const LayerCost& cost,
                                          const DeviceProfile& dev,
                                          const LinkProfile& link) {
  LatencyBreakdown b;
  b.compute_s =
      ComputeSeconds(cost.mults_per_node, cost.reductions_per_node, dev) +
      cost.fixed_compute_s;
  if (FootprintBytes(cost, dev) > dev.mem_bytes) {
    b.compute_s *= dev.swap_factor;
    b.swapped = true;
  }
  b.merge_s = static_cast<double>(cost.merge_cost) / dev.reduce_rate;
  b.comm_s = TransferSeconds(cost.comm_total_elems, cost.messages, dev, link);
  return b;
}

double EstimateLatency(const LayerCost& cost, const DeviceProfile& dev,
                       const LinkProfile& link) {
  return EstimateLatencyBreakdown(cost, dev, link).total();
}

double SpeedupEstimate(double work_s, std::int64_t nodes, double overhead_s) {
  if (work_s <= 0 || nodes < 1 || overhead_s < 0) {
    throw InvalidArgument("speedup needs W > 0, n >= 1, overhead >= 0");
  }
  return work_s / (work_s / static_cast<double>(nodes) + overhead_s);
}

double SpatialInputElemsPaper(std::int64_t h, std::int64_t w, std::int64_t c,
                              std::int64_t f, std::int64_t d) {
  const double d2 = static_cast<double>(d * d);
  return static_cast<double>(h * w * c) / d2 +
         4.0 * static_cast<double>(f / 2) * (d2 - static_cast<double>(d));
}

std::int64_t SpatialInputElemsExact(std::int64_t h, std::int64_t w,
                                    std::int64_t c, std::int64_t f,
                                    std::int64_t parts_y,
                                    std::int64_t parts_x) {
  std::int64_t total = 0;
  for (std::int64_t y = 0; y < parts_y; ++y) {
    for (std::int64_t x = 0; x < parts_x; ++x) {
      const SpatialRect r = HaloRect(h, w, f, parts_y, parts_x, y, x);
      total += r.height() * r.width();
    }
  }
  return total * c;
}

DeviceProfile CalibrateProfile(const DeviceProfile& base,
                               const std::vector<CalibrationSample>& samples) {
  if (samples.size() < 2) {
    throw InvalidArgument("calibration needs at least two samples");
  }
  Eigen::MatrixXd a(samples.size(), 2);
  Eigen::VectorXd t(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    a(i, 0) = static_cast<double>(s.cost.mults_per_node);
    a(i, 1) = static_cast<double>(s.cost.reductions_per_node);
    t(i) = s.measured_compute_s - s.cost.fixed_compute_s;
  }
  const Eigen::VectorXd inv = a.colPivHouseholderQr().solve(t);
  if (!(inv(0) > 0) || !(inv(1) > 0)) {
    throw InvalidArgument("calibration samples do not yield positive rates");
  }
  DeviceProfile out = base;
  out.mult_rate = 1.0 / inv(0);
  out.reduce_rate = 1.0 / inv(1);
  return out;
}

}  // namespace cdnn
