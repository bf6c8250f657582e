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

#include "cdnn/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cdnn/error.h"

namespace cdnn {

namespace {

void CheckBias(const std::optional<Tensor>& bias, std::int64_t n) {
  if (bias && bias->shape() != Shape{n}) {
    throw ShapeError("bias of shape " + ShapeToString(bias->shape()) +
                     " does not match " + std::to_string(n) + " outputs");
  }
}

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Tensor DenseForward(const Tensor& x, const Tensor& w,
                    const std::optional<Tensor>& bias) {
  if (x.rank() != 1 || w.rank() != 2 || w.dim(0) != x.dim(0)) {
    throw ShapeError("dense: input " + ShapeToString(x.shape()) +
                     " incompatible with weights " + ShapeToString(w.shape()));
  }
  const std::int64_t d_in = w.dim(0);
  const std::int64_t d_out = w.dim(1);
  CheckBias(bias, d_out);
  std::vector<double> acc(static_cast<std::size_t>(d_out), 0.0);
  const float* wp = w.data().data();
  for (std::int64_t i = 0; i < d_in; ++i) {
    const double xi = x[static_cast<std::size_t>(i)];
    const float* row = wp + i * d_out;
    for (std::int64_t j = 0; j < d_out; ++j) acc[j] += xi * row[j];
  }
  Tensor out({d_out});
  for (std::int64_t j = 0; j < d_out; ++j) {
    double v = acc[j];
    if (bias) v += (*bias)[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)] = static_cast<float>(v);
  }
  return out;
}

Tensor Conv2DForward(const Tensor& x, const Tensor& filters,
                     std::int64_t stride, const Padding& padding,
                     const std::optional<Tensor>& bias) {
  if (filters.rank() != 4) {
    throw ShapeError("conv2d: filters must be f x f x C x k, got " +
                     ShapeToString(filters.shape()));
  }
  return Conv2DForward(x, filters, stride,
                       Pad2D::Uniform(padding.For(filters.dim(0))), bias);
}

Tensor Conv2DForward(const Tensor& x, const Tensor& filters,
                     std::int64_t stride, const Pad2D& pad,
                     const std::optional<Tensor>& bias) {
  if (x.rank() != 3 || filters.rank() != 4 || filters.dim(0) != filters.dim(1) ||
      filters.dim(2) != x.dim(2)) {
    throw ShapeError("conv2d: input " + ShapeToString(x.shape()) +
                     " incompatible with filters " +
                     ShapeToString(filters.shape()));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::int64_t f = filters.dim(0), k = filters.dim(3);
  CheckBias(bias, k);
  const std::int64_t span_h = h + pad.top + pad.bottom - f;
  const std::int64_t span_w = w + pad.left + pad.right - f;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(f) +
                     " larger than padded input " + ShapeToString(x.shape()));
  }
  const std::int64_t ho = span_h / stride + 1;
  const std::int64_t wo = span_w / stride + 1;
  Tensor out({ho, wo, k});
  std::vector<double> acc(static_cast<std::size_t>(k));
  const float* xp = x.data().data();
  const float* fp = filters.data().data();
  for (std::int64_t oy = 0; oy < ho; ++oy) {
    for (std::int64_t ox = 0; ox < wo; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t fy = 0; fy < f; ++fy) {
        const std::int64_t iy = oy * stride + fy - pad.top;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t fx = 0; fx < f; ++fx) {
          const std::int64_t ix = ox * stride + fx - pad.left;
          if (ix < 0 || ix >= w) continue;
          const float* xin = xp + (iy * w + ix) * c;
          const float* wk = fp + (fy * f + fx) * c * k;
          for (std::int64_t ci = 0; ci < c; ++ci) {
            const double v = xin[ci];
            const float* wrow = wk + ci * k;
            for (std::int64_t kk = 0; kk < k; ++kk) acc[kk] += v * wrow[kk];
          }
        }
      }
      float* o = out.data().data() + (oy * wo + ox) * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        double v = acc[kk];
        if (bias) v += (*bias)[static_cast<std::size_t>(kk)];
        o[kk] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Tensor Conv3DForward(const Tensor& x, const Tensor& filters,
                     std::int64_t stride, const Padding& padding,
                     const std::optional<Tensor>& bias) {
  if (x.rank() != 4 || filters.rank() != 5 ||
      filters.dim(1) != filters.dim(2) || filters.dim(3) != x.dim(3)) {
    throw ShapeError("conv3d: input " + ShapeToString(x.shape()) +
                     " incompatible with filters " +
                     ShapeToString(filters.shape()));
  }
  if (stride < 1) throw ShapeError("conv3d: stride must be >= 1");
  const std::int64_t d = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::int64_t fd = filters.dim(0), f = filters.dim(1),
                     k = filters.dim(4);
  CheckBias(bias, k);
  const std::int64_t pd = padding.For(fd), p = padding.For(f);
  const std::int64_t dout = ConvOutputExtent(d, fd, stride, pd);
  const std::int64_t ho = ConvOutputExtent(h, f, stride, p);
  const std::int64_t wo = ConvOutputExtent(w, f, stride, p);
  if (dout <= 0 || ho <= 0 || wo <= 0) {
    throw ShapeError("conv3d: kernel larger than padded input " +
                     ShapeToString(x.shape()));
  }
  Tensor out({dout, ho, wo, k});
  std::vector<double> acc(static_cast<std::size_t>(k));
  const float* xp = x.data().data();
  const float* fp = filters.data().data();
  for (std::int64_t oz = 0; oz < dout; ++oz) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t fz = 0; fz < fd; ++fz) {
          const std::int64_t iz = oz * stride + fz - pd;
          if (iz < 0 || iz >= d) continue;
          for (std::int64_t fy = 0; fy < f; ++fy) {
            const std::int64_t iy = oy * stride + fy - p;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t fx = 0; fx < f; ++fx) {
              const std::int64_t ix = ox * stride + fx - p;
              if (ix < 0 || ix >= w) continue;
              const float* xin = xp + ((iz * h + iy) * w + ix) * c;
              const float* wk = fp + ((fz * f + fy) * f + fx) * c * k;
              for (std::int64_t ci = 0; ci < c; ++ci) {
                const double v = xin[ci];
                const float* wrow = wk + ci * k;
                for (std::int64_t kk = 0; kk < k; ++kk) acc[kk] += v * wrow[kk];
              }
            }
          }
        }
        float* o = out.data().data() + ((oz * ho + oy) * wo + ox) * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
          double v = acc[kk];
          if (bias) v += (*bias)[static_cast<std::size_t>(kk)];
          o[kk] = static_cast<float>(v);
        }
      }
    }
  }
  return out;
}

Tensor PoolForward(const Tensor& x, PoolKind kind, std::int64_t window,
                   std::int64_t stride) {
  if (x.rank() != 3) {
    throw ShapeError("pool: expects H x W x C, got " + ShapeToString(x.shape()));
  }
  const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::int64_t ho = ConvOutputExtent(h, window, stride, 0);
  const std::int64_t wo = ConvOutputExtent(w, window, stride, 0);
  if (ho <= 0 || wo <= 0) {
    throw ShapeError("pool: window larger than input " +
                     ShapeToString(x.shape()));
  }
  Tensor out({ho, wo, c});
  for (std::int64_t oy = 0; oy < ho; ++oy) {
    for (std::int64_t ox = 0; ox < wo; ++ox) {
      for (std::int64_t ci = 0; ci < c; ++ci) {
        double acc = kind == PoolKind::kMax
                         ? -std::numeric_limits<double>::infinity()
                         : 0.0;
        for (std::int64_t wy = 0; wy < window; ++wy) {
          for (std::int64_t wx = 0; wx < window; ++wx) {
            const double v = x[static_cast<std::size_t>(
                ((oy * stride + wy) * w + ox * stride + wx) * c + ci)];
            acc = kind == PoolKind::kMax ? std::max(acc, v) : acc + v;
          }
        }
        if (kind == PoolKind::kAvg) acc /= static_cast<double>(window * window);
        out[static_cast<std::size_t>((oy * wo + ox) * c + ci)] =
            static_cast<float>(acc);
      }
    }
  }
  return out;
}

float Activate(ActivationKind kind, float v) {
  switch (kind) {
    case ActivationKind::kReLU:
      return v > 0.0f ? v : 0.0f;
    case ActivationKind::kSigmoid:
      return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    case ActivationKind::kIdentity:
      return v;
  }
  return v;
}

Tensor ActivationForward(const Tensor& x, ActivationKind kind) {
  Tensor out = x;
  for (auto& v : out.data()) v = Activate(kind, v);
  return out;
}

Tensor LayerForward(const LayerSpec& layer, const Tensor& x,
                    const LayerWeights& weights) {
  Shape expected = LayerOutputShape(layer, x.shape());
  if (HasWeights(layer) && weights.kernel.shape() != KernelShape(layer)) {
    throw ShapeError("weights of shape " +
                     ShapeToString(weights.kernel.shape()) + " given to " +
                     LayerSignature(layer));
  }
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    return DenseForward(x, weights.kernel,
                        d->has_bias ? weights.bias : std::nullopt);
  }
  if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
    return Conv2DForward(x, weights.kernel, c->stride, c->padding,
                         c->has_bias ? weights.bias : std::nullopt);
  }
  if (const auto* c = std::get_if<Conv3DLayer>(&layer)) {
    return Conv3DForward(x, weights.kernel, c->stride, c->padding,
                         c->has_bias ? weights.bias : std::nullopt);
  }
  if (const auto* p = std::get_if<Pool2DLayer>(&layer)) {
    return PoolForward(x, p->kind, p->window, p->stride);
  }
  if (const auto* a = std::get_if<ActivationLayer>(&layer)) {
    return ActivationForward(x, a->kind);
  }
  if (std::holds_alternative<FlattenLayer>(layer)) {
    return x.Reshaped(std::move(expected));
  }
  // Opaque blocks are placeholders for profiled computation; numerically they
  // pass their input through.
  return x;
}

Tensor RangeForward(const ModelGraph& graph, const ModelWeights& weights,
                    std::size_t first, std::size_t last, Tensor x) {
  for (std::size_t i = first; i <= last && i < graph.layers.size(); ++i) {
    x = LayerForward(graph.layers[i], x, weights.at(i));
  }
  return x;
}

Tensor ModelForward(const ModelGraph& graph, const ModelWeights& weights,
                    const Tensor& x) {
  if (x.shape() != graph.input_shape) {
    throw ShapeError("model input " + ShapeToString(x.shape()) +
                     " does not match " + ShapeToString(graph.input_shape));
  }
  if (graph.layers.empty()) return x;
  return RangeForward(graph, weights, 0, graph.layers.size() - 1, x);
}

Shape KernelShape(const LayerSpec& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    return {d->input_dim, d->output_dim};
  }
  if (const auto* c = std::get_if<Conv2DLayer>(&layer)) {
    return {c->kernel, c->kernel, c->c_in, c->filters};
  }
  if (const auto* c = std::get_if<Conv3DLayer>(&layer)) {
    return {c->kernel_depth, c->kernel, c->kernel, c->c_in, c->filters};
  }
  return {};
}

LayerWeights MakeLayerWeights(const LayerSpec& layer, std::uint64_t seed,
                              std::size_t layer_index) {
  LayerWeights lw;
  if (!HasWeights(layer)) return lw;
  std::mt19937_64 rng(SplitMix64(seed ^ SplitMix64(layer_index + 1)));
  const Shape ks = KernelShape(layer);
  lw.kernel = RandomTensor(ks, rng);
  // Scale by 1/sqrt(fan_in) so deep chains keep activations O(1).
  const std::int64_t fan_in = NumElements(ks) / ks.back();
  const float scale = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (auto& v : lw.kernel.data()) v *= scale;
  const bool has_bias = std::visit(
      [](const auto& l) {
        if constexpr (requires { l.has_bias; }) {
          return l.has_bias;
        } else {
          return false;
        }
      },
      layer);
  if (has_bias) lw.bias = RandomTensor({ks.back()}, rng);
  return lw;
}

ModelWeights MakeModelWeights(const ModelGraph& graph, std::uint64_t seed) {
  ModelWeights w;
  w.reserve(graph.layers.size());
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    w.push_back(MakeLayerWeights(graph.layers[i], seed, i));
  }
  return w;
}

}  // namespace cdnn
