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

#include "cdnn/splitter.h"

#include <algorithm>
#include <random>
#include <sstream>

#include "cdnn/error.h"
#include "cdnn/text_util.h"

namespace cdnn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::int64_t CeilDiv(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

bool IsSameStrideOne(const Conv2DLayer& c) {
  return c.stride == 1 && c.kernel % 2 == 1 &&
         c.padding.For(c.kernel) == c.kernel / 2;
}

Shape ParentInputShape(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const DenseLayer& d) { return Shape{d.input_dim}; },
          [](const Conv2DLayer& c) { return Shape{c.h_in, c.w_in, c.c_in}; },
          [](const Conv3DLayer& c) {
            return Shape{c.d_in, c.h_in, c.w_in, c.c_in};
          },
          [](const auto&) -> Shape {
            throw InvalidArgument("only dense and convolution layers split");
          }},
      layer);
}

void CheckDegree(std::int64_t degree, std::int64_t limit,
                 const std::string& what) {
  if (degree < 1 || degree > limit) {
    throw InvalidArgument(what + " must be in [1, " + std::to_string(limit) +
                          "], got " + std::to_string(degree));
  }
}

// Kernel input/output axis sizes and bias presence of a weighted layer.
struct KernelAxes {
  std::int64_t in = 0;
  std::int64_t out = 0;
  std::int64_t per_pair = 1;  // spatial taps per (in, out) pair
  bool bias = false;
};

KernelAxes AxesOf(const LayerSpec& layer) {
  return std::visit(
      Overloaded{[](const DenseLayer& d) {
                   return KernelAxes{d.input_dim, d.output_dim, 1, d.has_bias};
                 },
                 [](const Conv2DLayer& c) {
                   return KernelAxes{c.c_in, c.filters, c.kernel * c.kernel,
                                     c.has_bias};
                 },
                 [](const Conv3DLayer& c) {
                   return KernelAxes{c.c_in, c.filters,
                                     c.kernel * c.kernel * c.kernel_depth,
                                     c.has_bias};
                 },
                 [](const auto&) { return KernelAxes{}; }},
      layer);
}

WeightSlice MakeSlice(const KernelAxes& a, IndexRange in, IndexRange out,
                      bool bias) {
  WeightSlice s{in, out, bias, in.size() * out.size() * a.per_pair};
  if (bias) s.element_count += out.size();
  return s;
}

// Input rows [lo, hi) needed to produce output rows [t0, t1) of a
// same-padded stride-1 convolution with radius r on an axis of length n,
// and the zero padding that makes up for clipping at the borders.
struct AxisNeed {
  std::int64_t lo, hi, pad_lo, pad_hi;
};

AxisNeed NeedAxis(std::int64_t t0, std::int64_t t1, std::int64_t r,
                  std::int64_t n) {
  const std::int64_t lo = std::max<std::int64_t>(0, t0 - r);
  const std::int64_t hi = std::min<std::int64_t>(n, t1 + r);
  return {lo, hi, lo - (t0 - r), (t1 + r) - hi};
}

Tensor SliceLastAxis(const Tensor& x, IndexRange r) {
  const std::int64_t c = x.shape().back();
  if (r.begin < 0 || r.end > c || r.size() <= 0) {
    throw ShapeError("channel range out of bounds for " +
                     ShapeToString(x.shape()));
  }
  Shape s = x.shape();
  s.back() = r.size();
  Tensor out(s);
  const std::int64_t outer = NumElements(x.shape()) / c;
  for (std::int64_t i = 0; i < outer; ++i) {
    std::copy_n(x.data().begin() + i * c + r.begin, r.size(),
                out.data().begin() + i * r.size());
  }
  return out;
}

// Slices a kernel whose last two axes are (in, out).
Tensor SliceKernel(const Tensor& k, IndexRange in, IndexRange out) {
  const std::size_t rank = k.rank();
  const std::int64_t ci = k.dim(rank - 2), co = k.dim(rank - 1);
  if (in.begin < 0 || in.end > ci || out.begin < 0 || out.end > co) {
    throw ShapeError("weight slice out of bounds for kernel " +
                     ShapeToString(k.shape()));
  }
  Shape s = k.shape();
  s[rank - 2] = in.size();
  s[rank - 1] = out.size();
  Tensor r(s);
  const std::int64_t taps = NumElements(k.shape()) / (ci * co);
  float* dst = r.data().data();
  for (std::int64_t t = 0; t < taps; ++t) {
    for (std::int64_t i = in.begin; i < in.end; ++i) {
      const float* src = k.data().data() + (t * ci + i) * co + out.begin;
      dst = std::copy_n(src, out.size(), dst);
    }
  }
  return r;
}

Tensor Apply(std::optional<ActivationKind> act, Tensor x) {
  if (act) return ActivationForward(x, *act);
  return x;
}

}  // namespace

std::string SplitMethodName(const SplitMethod& method) {
  return std::visit(Overloaded{[](const DenseOutputSplit&) { return "output"; },
                               [](const DenseInputSplit&) { return "input"; },
                               [](const ConvChannelSplit&) { return "channel"; },
                               [](const ConvSpatialSplit&) { return "spatial"; },
                               [](const ConvFilterSplit&) { return "filter"; }},
                    method);
}

std::string FormatSplitMethod(const SplitMethod& method) {
  std::ostringstream os;
  os << SplitMethodName(method) << '[';
  if (const auto* s = std::get_if<ConvSpatialSplit>(&method)) {
    os << s->parts_y << 'x' << s->parts_x;
  } else {
    os << SplitFactor(method);
  }
  os << ']';
  return os.str();
}

SplitMethod ParseSplitMethod(std::string_view text) {
  const auto open = text.find('[');
  if (open == std::string_view::npos || text.back() != ']') {
    throw ParseError("bad split method '" + std::string(text) + "'");
  }
  const std::string_view name = text.substr(0, open);
  const std::string_view arg = text.substr(open + 1, text.size() - open - 2);
  auto positive = [&](std::string_view v) {
    std::int64_t n = 0;
    try {
      n = ParseInt(v);
    } catch (const ParseError&) {
      throw ParseError("bad split method '" + std::string(text) + "'");
    }
    if (n < 1) throw ParseError("bad split method '" + std::string(text) + "'");
    return n;
  };
  if (name == "spatial") {
    const auto x = arg.find('x');
    if (x == std::string_view::npos) {
      throw ParseError("spatial split needs a YxX grid, got '" +
                       std::string(text) + "'");
    }
    return ConvSpatialSplit{positive(arg.substr(0, x)),
                            positive(arg.substr(x + 1))};
  }
  const std::int64_t n = positive(arg);
  if (name == "output") return DenseOutputSplit{n};
  if (name == "input") return DenseInputSplit{n};
  if (name == "channel") return ConvChannelSplit{n};
  if (name == "filter") return ConvFilterSplit{n};
  throw ParseError("unknown split method '" + std::string(name) + "'");
}

std::int64_t SplitFactor(const SplitMethod& method) {
  return std::visit(
      Overloaded{[](const DenseOutputSplit& m) { return m.nodes; },
                 [](const DenseInputSplit& m) { return m.nodes; },
                 [](const ConvChannelSplit& m) { return m.filters_per_node; },
                 [](const ConvSpatialSplit& m) { return m.parts_y * m.parts_x; },
                 [](const ConvFilterSplit& m) { return m.channels_per_batch; }},
      method);
}

bool SplitApplies(const SplitMethod& method, const LayerSpec& layer) {
  const bool dense = std::holds_alternative<DenseLayer>(layer);
  const bool conv2d = std::holds_alternative<Conv2DLayer>(layer);
  const bool conv3d = std::holds_alternative<Conv3DLayer>(layer);
  return std::visit(
      Overloaded{[&](const DenseOutputSplit&) { return dense; },
                 [&](const DenseInputSplit&) { return dense; },
                 [&](const ConvChannelSplit&) { return conv2d || conv3d; },
                 [&](const ConvSpatialSplit&) {
                   return conv2d && IsSameStrideOne(std::get<Conv2DLayer>(layer));
                 },
                 [&](const ConvFilterSplit&) { return conv2d || conv3d; }},
      method);
}

std::int64_t SplitNodeCount(const SplitMethod& method, const LayerSpec& layer) {
  const KernelAxes a = AxesOf(layer);
  return std::visit(
      Overloaded{[](const DenseOutputSplit& m) { return m.nodes; },
                 [](const DenseInputSplit& m) { return m.nodes; },
                 [&](const ConvChannelSplit& m) {
                   return CeilDiv(a.out, m.filters_per_node);
                 },
                 [](const ConvSpatialSplit& m) { return m.parts_y * m.parts_x; },
                 [&](const ConvFilterSplit& m) {
                   return CeilDiv(a.in, m.channels_per_batch);
                 }},
      method);
}

std::vector<SplitMethod> SplitsWithNodeCount(const LayerSpec& layer,
                                             std::int64_t nodes) {
  std::vector<SplitMethod> out;
  if (nodes < 1) return out;
  const KernelAxes a = AxesOf(layer);
  auto consider = [&](const SplitMethod& m, std::int64_t limit) {
    if (SplitFactor(m) <= limit && SplitApplies(m, layer) &&
        SplitNodeCount(m, layer) == nodes) {
      out.push_back(m);
    }
  };
  consider(DenseOutputSplit{nodes}, a.out);
  consider(ConvChannelSplit{CeilDiv(a.out, nodes)}, a.out);
  if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
    for (std::int64_t py = nodes; py >= 1; --py) {
      if (nodes % py != 0) continue;
      const std::int64_t px = nodes / py;
      if (py <= c->h_in && px <= c->w_in) {
        consider(ConvSpatialSplit{py, px}, nodes);
      }
    }
  }
  consider(DenseInputSplit{nodes}, a.in);
  consider(ConvFilterSplit{CeilDiv(a.in, nodes)}, a.in);
  return out;
}

std::vector<IndexRange> BalancedRanges(std::int64_t total,
                                       std::int64_t parts) {
  if (parts < 1 || total < parts) {
    throw InvalidArgument("cannot split " + std::to_string(total) + " into " +
                          std::to_string(parts) + " non-empty parts");
  }
  std::vector<IndexRange> out;
  const std::int64_t base = total / parts, extra = total % parts;
  std::int64_t at = 0;
  for (std::int64_t i = 0; i < parts; ++i) {
    const std::int64_t len = base + (i < extra ? 1 : 0);
    out.push_back({at, at + len});
    at += len;
  }
  return out;
}

SpatialRect HaloRect(std::int64_t height, std::int64_t width,
                     std::int64_t kernel, std::int64_t parts_y,
                     std::int64_t parts_x, std::int64_t cell_y,
                     std::int64_t cell_x) {
  if (cell_y < 0 || cell_y >= parts_y || cell_x < 0 || cell_x >= parts_x) {
    throw InvalidArgument("cell outside the grid");
  }
  const IndexRange ry = BalancedRanges(height, parts_y)[cell_y];
  const IndexRange rx = BalancedRanges(width, parts_x)[cell_x];
  const std::int64_t r = kernel / 2;
  const AxisNeed ny = NeedAxis(ry.begin, ry.end, r, height);
  const AxisNeed nx = NeedAxis(rx.begin, rx.end, r, width);
  return {ny.lo, ny.hi, nx.lo, nx.hi};
}

SplitPlan SplitSpatialChain(const std::vector<LayerSpec>& chain,
                            std::int64_t parts_y, std::int64_t parts_x) {
  const Conv2DLayer* first = nullptr;
  const Conv2DLayer* last = nullptr;
  std::int64_t param_elems = 0;
  for (const auto& l : chain) {
    if (const auto* c = std::get_if<Conv2DLayer>(&l)) {
      if (!IsSameStrideOne(*c)) {
        throw InvalidArgument(
            "spatial splitting needs stride-1 same-padded convolutions, got " +
            LayerSignature(l));
      }
      if (first && (c->h_in != first->h_in || c->w_in != first->w_in ||
                    c->c_in != last->filters)) {
        throw InvalidArgument("spatial chain layers do not connect: " +
                              LayerSignature(l));
      }
      if (!first) first = c;
      last = c;
      param_elems += ParamCount(l);
    } else if (!std::holds_alternative<ActivationLayer>(l)) {
      throw InvalidArgument("spatial chain may only hold conv2d and "
                            "activation layers, got " + LayerKindName(l));
    }
  }
  if (!first) throw InvalidArgument("spatial chain has no convolution");
  const std::int64_t h = first->h_in, w = first->w_in;
  CheckDegree(parts_y, h, "spatial parts_y");
  CheckDegree(parts_x, w, "spatial parts_x");
  const auto rows = BalancedRanges(h, parts_y);
  const auto cols = BalancedRanges(w, parts_x);

  SplitPlan plan;
  plan.output_shape = {h, w, last->filters};
  plan.merge = MergeOp{MergeKind::kConcatGrid, parts_y, parts_x, std::nullopt};
  for (std::int64_t cy = 0; cy < parts_y; ++cy) {
    for (std::int64_t cx = 0; cx < parts_x; ++cx) {
      Shard s;
      s.node_index = cy * parts_x + cx;
      s.tasks.resize(chain.size());
      s.paddings.resize(chain.size());
      // Walk backwards from the output cell, growing the region each
      // convolution needs.
      SpatialRect t{rows[cy].begin, rows[cy].end, cols[cx].begin,
                    cols[cx].end};
      for (std::size_t i = chain.size(); i-- > 0;) {
        const auto* c = std::get_if<Conv2DLayer>(&chain[i]);
        if (!c) {
          s.tasks[i] = chain[i];
          continue;
        }
        const AxisNeed ny = NeedAxis(t.y0, t.y1, c->kernel / 2, h);
        const AxisNeed nx = NeedAxis(t.x0, t.x1, c->kernel / 2, w);
        s.paddings[i] = Pad2D{ny.pad_lo, ny.pad_hi, nx.pad_lo, nx.pad_hi};
        t = {ny.lo, ny.hi, nx.lo, nx.hi};
        Conv2DLayer reduced = *c;
        reduced.h_in = t.height();
        reduced.w_in = t.width();
        // The per-side paddings above replace the uniform padding.
        reduced.padding = Padding{PaddingKind::kValid, 0};
        s.tasks[i] = reduced;
      }
      s.input = t;
      s.weights = WeightSlice{{0, first->c_in}, {0, last->filters},
                              last->has_bias, param_elems};
      s.output_shape = {rows[cy].size(), cols[cx].size(), last->filters};
      plan.shards.push_back(std::move(s));
    }
  }
  return plan;
}

SplitPlan SplitLayer(const LayerSpec& layer, const SplitMethod& method,
                     std::optional<ActivationKind> activation) {
  if (!SplitApplies(method, layer)) {
    throw InvalidArgument("split " + FormatSplitMethod(method) +
                          " does not apply to " + LayerSignature(layer));
  }
  const KernelAxes axes = AxesOf(layer);
  SplitPlan plan;
  plan.output_shape = LayerOutputShape(layer, ParentInputShape(layer));

  if (const auto* m = std::get_if<ConvSpatialSplit>(&method)) {
    plan = SplitSpatialChain({layer}, m->parts_y, m->parts_x);
    for (auto& s : plan.shards) s.activation = activation;
    return plan;
  }

  const bool sum_merge = std::holds_alternative<DenseInputSplit>(method) ||
                         std::holds_alternative<ConvFilterSplit>(method);
  const bool split_out = std::holds_alternative<DenseOutputSplit>(method) ||
                         std::holds_alternative<ConvChannelSplit>(method);
  if (split_out) {
    if (const auto* m = std::get_if<DenseOutputSplit>(&method)) {
      CheckDegree(m->nodes, axes.out, "output split node count");
    } else {
      CheckDegree(std::get<ConvChannelSplit>(method).filters_per_node,
                  axes.out, "filters per node");
    }
  } else if (const auto* m = std::get_if<DenseInputSplit>(&method)) {
    CheckDegree(m->nodes, axes.in, "input split node count");
  } else {
    CheckDegree(std::get<ConvFilterSplit>(method).channels_per_batch, axes.in,
                "channels per batch");
  }
  const std::int64_t nodes = SplitNodeCount(method, layer);
  const auto ranges = BalancedRanges(split_out ? axes.out : axes.in, nodes);

  for (std::int64_t i = 0; i < nodes; ++i) {
    const IndexRange r = ranges[i];
    Shard s;
    s.node_index = i;
    const bool bias = axes.bias && (split_out || i == 0);
    const IndexRange in = split_out ? IndexRange{0, axes.in} : r;
    const IndexRange out = split_out ? r : IndexRange{0, axes.out};
    s.weights = MakeSlice(axes, in, out, bias);
    s.output_shape = plan.output_shape;
    if (split_out) s.output_shape.back() = r.size();
    std::visit(Overloaded{[&](DenseLayer d) {
                            d.input_dim = in.size();
                            d.output_dim = out.size();
                            d.has_bias = bias;
                            s.tasks.push_back(d);
                          },
                          [&](auto c) {
                            using T = decltype(c);
                            if constexpr (std::is_same_v<T, Conv2DLayer> ||
                                          std::is_same_v<T, Conv3DLayer>) {
                              c.c_in = in.size();
                              c.filters = out.size();
                              c.has_bias = bias;
                              s.tasks.push_back(c);
                            }
                          }},
               layer);
    if (split_out) {
      s.input = FullInput{};
    } else if (std::holds_alternative<DenseLayer>(layer)) {
      s.input = RowRange{r};
    } else {
      s.input = ChannelRange{r};
    }
    if (!sum_merge) s.activation = activation;
    plan.shards.push_back(std::move(s));
  }
  plan.merge.kind = sum_merge ? MergeKind::kSum : MergeKind::kConcat;
  if (sum_merge) plan.merge.activation_after_merge = activation;
  return plan;
}

Tensor ShardInput(const Tensor& x, const Shard& shard) {
  return std::visit(
      Overloaded{
          [&](const FullInput&) { return x; },
          [&](const RowRange& r) {
            if (x.rank() != 1 || r.rows.begin < 0 || r.rows.end > x.dim(0) ||
                r.rows.size() <= 0) {
              throw ShapeError("row range out of bounds for " +
                               ShapeToString(x.shape()));
            }
            Tensor out({r.rows.size()});
            std::copy_n(x.data().begin() + r.rows.begin, r.rows.size(),
                        out.data().begin());
            return out;
          },
          [&](const SpatialRect& r) {
            if (x.rank() != 3 || r.y0 < 0 || r.x0 < 0 || r.y1 > x.dim(0) ||
                r.x1 > x.dim(1) || r.height() <= 0 || r.width() <= 0) {
              throw ShapeError("spatial rectangle out of bounds for " +
                               ShapeToString(x.shape()));
            }
            const std::int64_t w = x.dim(1), c = x.dim(2);
            Tensor out({r.height(), r.width(), c});
            float* dst = out.data().data();
            for (std::int64_t y = r.y0; y < r.y1; ++y) {
              dst = std::copy_n(x.data().data() + (y * w + r.x0) * c,
                                r.width() * c, dst);
            }
            return out;
          },
          [&](const ChannelRange& r) {
            if (x.rank() < 3) {
              throw ShapeError("channel range on non-spatial tensor " +
                               ShapeToString(x.shape()));
            }
            return SliceLastAxis(x, r.channels);
          }},
      shard.input);
}

std::vector<LayerWeights> ShardWeights(
    const Shard& shard, const std::vector<LayerWeights>& parent) {
  if (parent.size() != shard.tasks.size()) {
    throw InvalidArgument("expected weights for " +
                          std::to_string(shard.tasks.size()) + " tasks, got " +
                          std::to_string(parent.size()));
  }
  if (shard.tasks.size() != 1) return parent;
  const LayerWeights& p = parent[0];
  if (p.kernel.rank() < 2) return parent;
  LayerWeights w;
  w.kernel = SliceKernel(p.kernel, shard.weights.in, shard.weights.out);
  if (shard.weights.includes_bias) {
    if (!p.bias) throw InvalidArgument("shard expects a bias the layer lacks");
    w.bias = SliceLastAxis(p.bias->Reshaped({1, 1, p.bias->dim(0)}),
                           shard.weights.out)
                 .Reshaped({shard.weights.out.size()});
  }
  return {w};
}

Tensor RunShard(const Shard& shard, const std::vector<LayerWeights>& weights,
                const Tensor& input) {
  if (weights.size() != shard.tasks.size()) {
    throw InvalidArgument("shard weights do not match its tasks");
  }
  Tensor x = input;
  for (std::size_t i = 0; i < shard.tasks.size(); ++i) {
    const auto* conv = std::get_if<Conv2DLayer>(&shard.tasks[i]);
    if (conv && !shard.paddings.empty()) {
      x = Conv2DForward(x, weights[i].kernel, conv->stride, shard.paddings[i],
                        weights[i].bias);
    } else {
      x = LayerForward(shard.tasks[i], x, weights[i]);
    }
  }
  return Apply(shard.activation, std::move(x));
}

Tensor MergeOutputs(const std::vector<Tensor>& partials, const MergeOp& merge) {
  if (partials.empty()) throw InvalidArgument("nothing to merge");
  const Tensor& p0 = partials[0];
  switch (merge.kind) {
    case MergeKind::kSum: {
      std::vector<double> acc(p0.size(), 0.0);
      for (const auto& p : partials) {
        if (p.shape() != p0.shape()) {
          throw ShapeError("sum merge of " + ShapeToString(p0.shape()) +
                           " and " + ShapeToString(p.shape()));
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
      }
      Tensor out(p0.shape());
      for (std::size_t i = 0; i < acc.size(); ++i) {
        out[i] = static_cast<float>(acc[i]);
      }
      return Apply(merge.activation_after_merge, std::move(out));
    }
    case MergeKind::kConcat: {
      Shape lead(p0.shape().begin(), p0.shape().end() - 1);
      std::int64_t total = 0;
      for (const auto& p : partials) {
        if (p.rank() != p0.rank() ||
            !std::equal(lead.begin(), lead.end(), p.shape().begin())) {
          throw ShapeError("concat merge of " + ShapeToString(p0.shape()) +
                           " and " + ShapeToString(p.shape()));
        }
        total += p.shape().back();
      }
      Shape s = lead;
      s.push_back(total);
      Tensor out(s);
      const std::int64_t outer = NumElements(lead);
      float* dst = out.data().data();
      for (std::int64_t i = 0; i < outer; ++i) {
        for (const auto& p : partials) {
          const std::int64_t c = p.shape().back();
          dst = std::copy_n(p.data().data() + i * c, c, dst);
        }
      }
      return Apply(merge.activation_after_merge, std::move(out));
    }
    case MergeKind::kConcatGrid: {
      const std::int64_t gy = merge.grid_y, gx = merge.grid_x;
      if (static_cast<std::int64_t>(partials.size()) != gy * gx) {
        throw ShapeError("grid merge expects " + std::to_string(gy * gx) +
                         " partials, got " + std::to_string(partials.size()));
      }
      const std::int64_t c = p0.rank() == 3 ? p0.dim(2) : -1;
      std::int64_t h = 0, w = 0;
      for (std::int64_t cy = 0; cy < gy; ++cy) h += partials[cy * gx].dim(0);
      for (std::int64_t cx = 0; cx < gx; ++cx) w += partials[cx].dim(1);
      Tensor out({h, w, c});
      std::int64_t y0 = 0;
      for (std::int64_t cy = 0; cy < gy; ++cy) {
        std::int64_t x0 = 0;
        const std::int64_t ch = partials[cy * gx].dim(0);
        for (std::int64_t cx = 0; cx < gx; ++cx) {
          const Tensor& p = partials[cy * gx + cx];
          if (p.rank() != 3 || p.dim(0) != ch || p.dim(1) != partials[cx].dim(1) ||
              p.dim(2) != c) {
            throw ShapeError("grid merge cell " + ShapeToString(p.shape()) +
                             " does not fit the grid");
          }
          for (std::int64_t y = 0; y < ch; ++y) {
            std::copy_n(p.data().data() + y * p.dim(1) * c, p.dim(1) * c,
                        out.data().data() + ((y0 + y) * w + x0) * c);
          }
          x0 += p.dim(1);
        }
        y0 += ch;
      }
      return Apply(merge.activation_after_merge, std::move(out));
    }
  }
  throw InvalidArgument("unknown merge kind");
}

namespace {

Tensor RunPlan(const SplitPlan& plan, const std::vector<LayerWeights>& weights,
               const Tensor& x) {
  std::vector<Tensor> partials;
  for (const auto& s : plan.shards) {
    partials.push_back(
        RunShard(s, ShardWeights(s, weights), ShardInput(x, s)));
  }
  return MergeOutputs(partials, plan.merge);
}

}  // namespace

double VerifySplit(const LayerSpec& layer, const SplitMethod& method,
                   int trials, std::uint64_t seed,
                   std::optional<ActivationKind> activation) {
  const SplitPlan plan = SplitLayer(layer, method, activation);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Tensor x = RandomTensor(ParentInputShape(layer), rng);
    const LayerWeights w =
        MakeLayerWeights(layer, seed + static_cast<std::uint64_t>(t), 0);
    const Tensor want = Apply(activation, LayerForward(layer, x, w));
    worst = std::max(worst, MaxAbsDiff(RunPlan(plan, {w}, x), want));
  }
  return worst;
}

double VerifySpatialChain(const std::vector<LayerSpec>& chain,
                          std::int64_t parts_y, std::int64_t parts_x,
                          int trials, std::uint64_t seed) {
  const SplitPlan plan = SplitSpatialChain(chain, parts_y, parts_x);
  const auto& first = std::get<Conv2DLayer>(
      *std::find_if(chain.begin(), chain.end(), [](const LayerSpec& l) {
        return std::holds_alternative<Conv2DLayer>(l);
      }));
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Tensor x = RandomTensor({first.h_in, first.w_in, first.c_in}, rng);
    std::vector<LayerWeights> weights;
    Tensor want = x;
    for (std::size_t i = 0; i < chain.size(); ++i) {
      weights.push_back(MakeLayerWeights(chain[i], seed + t, i));
      want = LayerForward(chain[i], want, weights.back());
    }
    worst = std::max(worst, MaxAbsDiff(RunPlan(plan, weights, x), want));
  }
  return worst;
}

}  // namespace cdnn
