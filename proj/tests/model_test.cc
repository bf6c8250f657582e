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

#include "cdnn/model.h"

#include <cmath>

#include "cdnn/error.h"
#include "gtest/gtest.h"

#ifndef CDNN_MODELS_DIR
#define CDNN_MODELS_DIR "models"
#endif

namespace cdnn {
namespace {

TEST(ParseModelTest, DenseInfersInputDimension) {
  auto g = ParseModel("model fc\ninput 7680\ndense out=4096\n");
  ASSERT_EQ(g.layers.size(), 1u);
  const auto& d = std::get<DenseLayer>(g.layers[0]);
  EXPECT_EQ(d.input_dim, 7680);
  EXPECT_EQ(d.output_dim, 4096);
  EXPECT_FALSE(d.has_bias);
  EXPECT_EQ(g.name, "fc");
}

TEST(ParseModelTest, EmptyLayerListIsAnError) {
  try {
    ParseModel("model m\ninput 4\n# nothing here\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("empty model"), std::string::npos);
  }
  EXPECT_THROW(ParseModel(""), ParseError);
}

TEST(ParseModelTest, EvenKernelWithSamePaddingRejected) {
  EXPECT_THROW(ParseModel("model m\ninput 8x8x1\nconv2d k=1 f=2 pad=same\n"),
               ParseError);
  // Valid padding has no oddness requirement.
  EXPECT_NO_THROW(
      ParseModel("model m\ninput 8x8x1\nconv2d k=1 f=2 pad=valid\n"));
}

TEST(ParseModelTest, ErrorsCarryPosition) {
  try {
    ParseModel("model m\ninput 8x8x1\nconv2d k=4 f=3\n  warp k=1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_EQ(e.column(), 3u);
  }
  try {
    ParseModel("model m\ninput 8x8x1\nconv2d k=x f=3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 10u);
  }
}

TEST(ParseModelTest, ShapeMismatchRejected) {
  // Dense needs a rank-1 input; a spatial tensor must be flattened first.
  EXPECT_THROW(ParseModel("model m\ninput 4x4x2\ndense out=3\n"), ParseError);
  EXPECT_THROW(ParseModel("model m\ninput 4x4x2\nconv2d k=2 f=7 pad=valid\n"),
               ParseError);
  EXPECT_THROW(ParseModel("model m\ninput 16\nconv2d k=2 f=3\n"), ParseError);
}

TEST(ParseModelTest, UnknownOptionAndKind) {
  EXPECT_THROW(ParseModel("model m\ninput 16\ndense out=3 colour=red\n"),
               ParseError);
  EXPECT_THROW(ParseModel("model m\ninput 16\nlstm units=3\n"), ParseError);
}

TEST(ParseModelTest, FormatRoundTrips) {
  const char* text =
      "model t\ninput 16x16x3\nconv2d k=8 f=3 s=1 pad=same bias=1\nrelu\n"
      "maxpool w=2 s=2\nconv2d k=4 f=2 s=2 pad=1\nflatten\ndense out=10\n"
      "sigmoid\nopaque latency=0.25 mem=1048576\n";
  auto g = ParseModel(text);
  EXPECT_EQ(FormatModel(g), text);
  auto g2 = ParseModel(FormatModel(g));
  EXPECT_EQ(g2.layers, g.layers);
}

TEST(ParseModelTest, OpaqueAcceptsByteSuffixes) {
  auto g = ParseModel("model r\ninput 8x8x3\nopaque latency=0.18 mem=12MB\n");
  const auto& o = std::get<OpaqueLayer>(g.layers[0]);
  EXPECT_DOUBLE_EQ(o.latency_s, 0.18);
  EXPECT_EQ(o.mem_bytes, 12 * 1024 * 1024);
}

TEST(InferShapesTest, ConvOutputSizes) {
  // 4x4 input, 3x3 filter, unit stride.
  EXPECT_EQ(ConvOutputExtent(4, 3, 1, 0), 2);
  EXPECT_EQ(ConvOutputExtent(4, 3, 1, 1), 4);
  auto g = ParseModel("model m\ninput 4x4x1\nconv2d k=1 f=3 pad=valid\n");
  EXPECT_EQ(InferShapes(g)[0], (Shape{2, 2, 1}));
  g = ParseModel("model m\ninput 4x4x1\nconv2d k=1 f=3 pad=1\n");
  EXPECT_EQ(InferShapes(g)[0], (Shape{4, 4, 1}));
  g = ParseModel("model m\ninput 5x5x2\nconv2d k=7 f=5 pad=same\n");
  EXPECT_EQ(InferShapes(g)[0], (Shape{5, 5, 7}));
}

TEST(InferShapesTest, SamePaddingPreservesSizeForOddKernels) {
  for (std::int64_t f = 1; f <= 11; f += 2) {
    for (std::int64_t i = f; i <= 20; ++i) {
      EXPECT_EQ(ConvOutputExtent(i, f, 1, f / 2), i) << "i=" << i << " f=" << f;
    }
  }
}

TEST(InferShapesTest, NonPositiveDimensionRejected) {
  ModelGraph g;
  g.name = "bad";
  g.input_shape = {2, 2, 1};
  g.layers.push_back(Pool2DLayer{PoolKind::kMax, 3, 1});
  EXPECT_THROW(InferShapes(g), ShapeError);
}

TEST(InferShapesTest, Conv3DAndFlatten) {
  auto g = ParseModel(
      "model c\ninput 8x16x16x3\nconv3d k=4 f=3 fd=3 pad=same\nflatten\n"
      "dense out=5\n");
  auto shapes = InferShapes(g);
  EXPECT_EQ(shapes[0], (Shape{8, 16, 16, 4}));
  EXPECT_EQ(shapes[1], (Shape{8 * 16 * 16 * 4}));
  EXPECT_EQ(shapes[2], (Shape{5}));
  EXPECT_EQ(ParamCount(g.layers[0]), 4 * 3 * 27);
}

TEST(ParamCountTest, DenseAndConv) {
  EXPECT_EQ(ParamCount(DenseLayer{8192, 8192, false}), 67'108'864);
  EXPECT_EQ(ParamCount(DenseLayer{4, 3, true}), 15);
  Conv2DLayer c;
  c.h_in = c.w_in = 8;
  c.c_in = 3;
  c.filters = 1;
  c.kernel = 3;
  EXPECT_EQ(ParamCount(c), 27);
  c.has_bias = true;
  EXPECT_EQ(ParamCount(c), 28);
  EXPECT_EQ(ParamCount(ActivationLayer{}), 0);
  EXPECT_EQ(ParamCount(OpaqueLayer{0.1, 100}), 0);
}

TEST(ParamCountTest, Vgg16IsAbout140Million) {
  auto g = LoadModel(std::string(CDNN_MODELS_DIR) + "/vgg16.mdl");
  const double params = static_cast<double>(ParamCount(g));
  EXPECT_LT(std::fabs(params - 140e6) / 140e6, 0.05) << params;
  EXPECT_EQ(InferShapes(g).back(), (Shape{1000}));
}

TEST(ParamCountTest, BundledModelsParse) {
  for (const char* name : {"alexnet", "toy", "resnet50_blocks"}) {
    auto g = LoadModel(std::string(CDNN_MODELS_DIR) + "/" + name + ".mdl");
    EXPECT_FALSE(g.layers.empty()) << name;
  }
  auto alex = LoadModel(std::string(CDNN_MODELS_DIR) + "/alexnet.mdl");
  // The first dense layer consumes the 6x6x256 feature map.
  bool found = false;
  for (const auto& l : alex.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l)) {
      EXPECT_EQ(d->input_dim, 9216);
      found = true;
      break;
    }
  }
  EXPECT_TRUE(found);
}

TEST(ByteSizeTest, Suffixes) {
  EXPECT_EQ(ParseByteSize("512"), 512);
  EXPECT_EQ(ParseByteSize("2KB"), 2048);
  EXPECT_EQ(ParseByteSize("256MB"), 256LL << 20);
  EXPECT_EQ(ParseByteSize("1GB"), 1LL << 30);
  EXPECT_THROW(ParseByteSize("MB"), ParseError);
  EXPECT_THROW(ParseByteSize("-3"), ParseError);
}

}  // namespace
}  // namespace cdnn
