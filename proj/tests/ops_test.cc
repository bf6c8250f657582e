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

#include <cmath>
#include <random>

#include "cdnn/error.h"
#include "gtest/gtest.h"

namespace cdnn {
namespace {

Tensor Ones(Shape s) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = 1.0f;
  return t;
}

// Oracle: copy into an explicitly zero-padded buffer, then convolve with
// the output-channel loop outermost.
Tensor NaiveConv2D(const Tensor& x, const Tensor& w, std::int64_t s,
                   std::int64_t p) {
  const auto h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const auto f = w.dim(0), k = w.dim(3);
  const auto hp = h + 2 * p, wp = wd + 2 * p;
  std::vector<double> padded(static_cast<std::size_t>(hp * wp * c), 0.0);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t xx = 0; xx < wd; ++xx)
      for (std::int64_t ci = 0; ci < c; ++ci)
        padded[((y + p) * wp + xx + p) * c + ci] = x[(y * wd + xx) * c + ci];
  const auto ho = (hp - f) / s + 1, wo = (wp - f) / s + 1;
  Tensor out({ho, wo, k});
  for (std::int64_t kk = 0; kk < k; ++kk)
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        double acc = 0;
        for (std::int64_t fy = 0; fy < f; ++fy)
          for (std::int64_t fx = 0; fx < f; ++fx)
            for (std::int64_t ci = 0; ci < c; ++ci)
              acc += padded[((oy * s + fy) * wp + ox * s + fx) * c + ci] *
                     w[((fy * f + fx) * c + ci) * k + kk];
        out[(oy * wo + ox) * k + kk] = static_cast<float>(acc);
      }
  return out;
}

TEST(DenseForwardTest, SmallExample) {
  Tensor x({2}, {1, 2});
  Tensor w({2, 4}, {1, 0, 1, 0, 0, 1, 1, 0});
  EXPECT_EQ(DenseForward(x, w).values(), (std::vector<float>{1, 2, 3, 0}));
  Tensor b({4}, {1, 1, 1, 1});
  EXPECT_EQ(DenseForward(x, w, b).values(), (std::vector<float>{2, 3, 4, 1}));
}

TEST(DenseForwardTest, ShapeMismatchThrows) {
  EXPECT_THROW(DenseForward(Tensor({3}), Tensor({2, 4})), ShapeError);
}

TEST(Conv2DForwardTest, AllOnesSamePadding) {
  auto out = Conv2DForward(Ones({3, 3, 1}), Ones({3, 3, 1, 1}), 1, Padding{});
  EXPECT_EQ(out.shape(), (Shape{3, 3, 1}));
  EXPECT_EQ(out.values(),
            (std::vector<float>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2DForwardTest, MatchesOracleAcrossConfigs) {
  std::mt19937_64 rng(7);
  for (std::int64_t f : {1, 2, 3, 5}) {
    for (std::int64_t s : {1, 2, 3}) {
      for (std::int64_t p : {0, 1, 2}) {
        Tensor x = RandomTensor({9, 7, 3}, rng);
        Tensor w = RandomTensor({f, f, 3, 4}, rng);
        auto got = Conv2DForward(x, w, s, Padding{PaddingKind::kExplicit, p});
        auto want = NaiveConv2D(x, w, s, p);
        ASSERT_EQ(got.shape(), want.shape());
        EXPECT_LE(MaxAbsDiff(got, want), 1e-5) << f << " " << s << " " << p;
      }
    }
  }
}

TEST(Conv2DForwardTest, AsymmetricPadding) {
  std::mt19937_64 rng(3);
  Tensor x = RandomTensor({6, 6, 2}, rng);
  Tensor w = RandomTensor({3, 3, 2, 2}, rng);
  // Uniform padding 1 cropped to the top-left 5x5 window equals per-side
  // padding {1, 0, 1, 0} on the first 6 rows and columns.
  auto full = Conv2DForward(x, w, 1, Pad2D::Uniform(1));
  auto part = Conv2DForward(x, w, 1, Pad2D{1, 0, 1, 0});
  ASSERT_EQ(part.shape(), (Shape{5, 5, 2}));
  for (std::int64_t y = 0; y < 5; ++y)
    for (std::int64_t xx = 0; xx < 5; ++xx)
      for (std::int64_t c = 0; c < 2; ++c)
        EXPECT_EQ(part[(y * 5 + xx) * 2 + c], full[(y * 6 + xx) * 2 + c]);
}

TEST(Conv2DForwardTest, Linearity) {
  std::mt19937_64 rng(11);
  Tensor a = RandomTensor({5, 5, 2}, rng);
  Tensor b = RandomTensor({5, 5, 2}, rng);
  Tensor w = RandomTensor({3, 3, 2, 3}, rng);
  Tensor sum(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
  auto ya = Conv2DForward(a, w, 1, Padding{});
  auto yb = Conv2DForward(b, w, 1, Padding{});
  auto ys = Conv2DForward(sum, w, 1, Padding{});
  for (std::size_t i = 0; i < ys.size(); ++i)
    EXPECT_NEAR(ys[i], ya[i] + yb[i], 1e-5);
}

TEST(Conv3DForwardTest, AllOnesValid) {
  auto out = Conv3DForward(Ones({3, 3, 3, 1}), Ones({3, 3, 3, 1, 1}), 1,
                           Padding{PaddingKind::kValid, 0});
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out[0], 27.0f);
}

TEST(Conv3DForwardTest, SingleDepthMatchesConv2D) {
  std::mt19937_64 rng(5);
  Tensor x = RandomTensor({1, 6, 6, 2}, rng);
  Tensor w = RandomTensor({1, 3, 3, 2, 4}, rng);
  auto y3 = Conv3DForward(x, w, 1, Padding{PaddingKind::kValid, 0});
  auto y2 = Conv2DForward(x.Reshaped({6, 6, 2}), w.Reshaped({3, 3, 2, 4}), 1,
                          Padding{PaddingKind::kValid, 0});
  EXPECT_EQ(y3.values(), y2.values());
}

TEST(PoolForwardTest, MaxAndAvg) {
  Tensor x({2, 4, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto mx = PoolForward(x, PoolKind::kMax, 2, 2);
  EXPECT_EQ(mx.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(mx.values(), (std::vector<float>{6, 8}));
  auto av = PoolForward(x, PoolKind::kAvg, 2, 2);
  EXPECT_EQ(av.values(), (std::vector<float>{3.5f, 5.5f}));
}

TEST(ActivationTest, Values) {
  EXPECT_EQ(Activate(ActivationKind::kReLU, -2.0f), 0.0f);
  EXPECT_EQ(Activate(ActivationKind::kReLU, 1.5f), 1.5f);
  EXPECT_NEAR(Activate(ActivationKind::kSigmoid, 0.0f), 0.5f, 1e-7);
  EXPECT_NEAR(Activate(ActivationKind::kSigmoid, 2.0f),
              1.0 / (1.0 + std::exp(-2.0)), 1e-6);
  EXPECT_EQ(Activate(ActivationKind::kIdentity, -3.0f), -3.0f);
}

TEST(WeightsTest, DeterministicPerLayer) {
  auto g = ParseModel(
      "model t\ninput 8x8x2\nconv2d k=4 f=3 bias=1\nrelu\nflatten\n"
      "dense out=5\n");
  auto a = MakeModelWeights(g, 42);
  auto b = MakeModelWeights(g, 42);
  auto c = MakeModelWeights(g, 43);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[0].kernel, b[0].kernel);
  EXPECT_NE(a[0].kernel, c[0].kernel);
  EXPECT_EQ(a[0].kernel.shape(), (Shape{3, 3, 2, 4}));
  ASSERT_TRUE(a[0].bias.has_value());
  EXPECT_EQ(a[3].kernel.shape(), (Shape{256, 5}));
  EXPECT_EQ(a[1].kernel.size(), 0u);
  // A layer rebuilt in isolation matches the whole-model draw.
  EXPECT_EQ(MakeLayerWeights(g.layers[3], 42, 3).kernel, a[3].kernel);
}

TEST(ModelForwardTest, EqualsManualComposition) {
  auto g = ParseModel(
      "model t\ninput 8x8x2\nconv2d k=4 f=3 bias=1\nrelu\nmaxpool w=2\n"
      "flatten\ndense out=5\nsigmoid\n");
  auto w = MakeModelWeights(g, 9);
  std::mt19937_64 rng(1);
  Tensor x = RandomTensor({8, 8, 2}, rng);
  Tensor h = Conv2DForward(x, w[0].kernel, 1, Padding{}, w[0].bias);
  h = ActivationForward(h, ActivationKind::kReLU);
  h = PoolForward(h, PoolKind::kMax, 2, 2);
  h = h.Reshaped({NumElements(h.shape())});
  h = DenseForward(h, w[4].kernel);
  h = ActivationForward(h, ActivationKind::kSigmoid);
  EXPECT_EQ(ModelForward(g, w, x), h);
  // Splitting the range anywhere gives the same result.
  Tensor mid = RangeForward(g, w, 0, 2, x);
  EXPECT_EQ(RangeForward(g, w, 3, 5, mid), h);
}

}  // namespace
}  // namespace cdnn
