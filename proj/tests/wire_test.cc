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

#include "cdnn/wire.h"

#include <random>

#include "cdnn/error.h"
#include "cdnn/text_util.h"
#include "gtest/gtest.h"

namespace cdnn {
namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes Golden(const std::string& name) {
  const std::string s = ReadFile(std::string(CDNN_GOLDEN_DIR "/") + name);
  return Bytes(s.begin(), s.end());
}

TEST(WireTest, TensorPayloadSize) {
  const Tensor t({2, 3});
  EXPECT_EQ(TensorWireSize(t), 1u + 2 * 4 + 24);
  EXPECT_EQ(EncodeFrame(BlobMsg{t}).size(), kFrameHeaderSize + 33);
}

TEST(WireTest, GoldenHello) {
  const Bytes b = Golden("hello.bin");
  const WireMessage m = DecodeFrame(b);
  EXPECT_EQ(m, WireMessage(HelloMsg{3, 0x0123456789ABCDEFull}));
  EXPECT_EQ(EncodeFrame(m), b);
}

TEST(WireTest, GoldenTensor) {
  const Bytes b = Golden("tensor_2x3.bin");
  const auto m = std::get<TensorMsg>(DecodeFrame(b));
  EXPECT_EQ(m.inference_id, 42u);
  EXPECT_EQ(m.tag, "L5.conv#1");
  EXPECT_EQ(m.tensor, Tensor({2, 3}, {0.5f, -1.0f, 2.25f, 0.0f, 1e-3f, -7.75f}));
  EXPECT_EQ(EncodeFrame(m), b);
}

TEST(WireTest, GoldenShutdown) {
  const Bytes b = Golden("shutdown.bin");
  EXPECT_EQ(DecodeFrame(b), WireMessage(ShutdownMsg{}));
  EXPECT_EQ(EncodeFrame(ShutdownMsg{}), b);
}

WireMessage RandomMessage(std::mt19937_64& rng) {
  auto pick = [&](int n) { return static_cast<int>(rng() % n); };
  auto random_tensor = [&] {
    Shape s(pick(4) + (pick(8) == 0 ? 0 : 1));
    for (auto& d : s) d = pick(6);
    Tensor t(s);
    for (auto& v : t.data()) v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
    return t;
  };
  switch (pick(5)) {
    case 0:
      return HelloMsg{static_cast<std::uint32_t>(rng()), rng()};
    case 1: {
      std::string tag(pick(20), 'x');
      for (auto& c : tag) c = static_cast<char>(rng());
      return TensorMsg{rng(), tag, random_tensor()};
    }
    case 2: {
      PipelineStats p;
      for (int i = pick(4); i > 0; --i) {
        NodeStats n;
        n.node = pick(10);
        n.observed_latency_s = std::ldexp(static_cast<double>(rng() >> 11), -50);
        n.busy_fraction = std::ldexp(static_cast<double>(rng() >> 11), -53);
        n.inferences = pick(1000);
        for (int k = pick(5); k >= 0; --k) n.queue_occupancy_hist.push_back(pick(50));
        p.nodes.push_back(n);
      }
      return StatsMsg{p};
    }
    case 3:
      return ShutdownMsg{};
    default:
      return BlobMsg{random_tensor()};
  }
}

TEST(WireTest, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const WireMessage m = RandomMessage(rng);
    const Bytes b = EncodeFrame(m);
    const WireMessage d = DecodeFrame(b);
    ASSERT_EQ(EncodeFrame(d), b) << i;
    ASSERT_EQ(d.index(), m.index());
    ASSERT_EQ(KindOf(d), static_cast<FrameKind>(b[5]));
  }
}

TEST(WireTest, DecodeErrors) {
  Bytes b = EncodeFrame(TensorMsg{1, "t", Tensor({4})});
  Bytes bad = b;
  bad[0] = 'X';
  EXPECT_THROW(DecodeFrame(bad), WireError);
  bad = b;
  bad[4] = 2;
  EXPECT_THROW(DecodeFrame(bad), WireError);
  bad = b;
  bad[5] = 9;
  EXPECT_THROW(DecodeFrame(bad), WireError);
  for (std::size_t n = 0; n < b.size(); ++n) {
    EXPECT_THROW(DecodeFrame(std::span(b).first(n)), WireError) << n;
  }
  bad = b;
  bad.push_back(0);
  EXPECT_THROW(DecodeFrame(bad), WireError);
  // A length field that claims less than the tensor needs.
  bad = b;
  bad[6] -= 4;
  bad.resize(bad.size() - 4);
  EXPECT_THROW(DecodeFrame(bad), WireError);
  // Huge dims with no data must not allocate.
  Bytes huge = EncodeFrame(BlobMsg{Tensor({0, 0})});
  for (int k = 11; k < 19; ++k) huge[k] = 0xFF;
  EXPECT_THROW(DecodeFrame(huge), WireError);
  Bytes stats = EncodeFrame(StatsMsg{});
  stats.insert(stats.end(), {'x', 'y'});
  stats[6] += 2;
  EXPECT_THROW(DecodeFrame(stats), WireError);
}

TEST(WireTest, TensorFile) {
  const std::string path = testing::TempDir() + "/tensors.bin";
  std::mt19937_64 rng(2);
  const std::vector<Tensor> ts = {RandomTensor({3, 4}, rng), RandomTensor({7}, rng)};
  WriteTensorFile(path, ts);
  EXPECT_EQ(ReadTensorFile(path), ts);
  WriteTensorFile(path, {});
  EXPECT_TRUE(ReadTensorFile(path).empty());
  WriteFile(path, "CDNN");
  EXPECT_THROW(ReadTensorFile(path), WireError);
  EXPECT_THROW(ReadTensorFile(path + ".missing"), IoError);
}

}  // namespace
}  // namespace cdnn
