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

#include <bit>
#include <cstring>
#include <limits>

#include "cdnn/error.h"
#include "cdnn/text_util.h"

namespace cdnn {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'C', 'D', 'N', 'N'};

class Writer {
 public:
  void U8(std::uint8_t v) { out_.push_back(v); }
  void U16(std::uint16_t v) { Le(v, 2); }
  void U32(std::uint32_t v) { Le(v, 4); }
  void U64(std::uint64_t v) { Le(v, 8); }
  void Bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void TensorData(const Tensor& t) {
    if (t.rank() > kMaxTensorRank) throw WireError("tensor rank too large");
    U8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) {
      if (d < 0 || d > std::numeric_limits<std::uint32_t>::max()) {
        throw WireError("tensor dim out of range");
      }
      U32(static_cast<std::uint32_t>(d));
    }
    for (float f : t.data()) U32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t>& out() { return out_; }

 private:
  void Le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t U8() { return static_cast<std::uint8_t>(Le(1)); }
  std::uint16_t U16() { return static_cast<std::uint16_t>(Le(2)); }
  std::uint32_t U32() { return static_cast<std::uint32_t>(Le(4)); }
  std::uint64_t U64() { return Le(8); }
  std::string Bytes(std::size_t n) {
    Need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor TensorData() {
    const std::size_t rank = U8();
    if (rank > kMaxTensorRank) throw WireError("tensor rank too large");
    Shape shape(rank);
    for (auto& d : shape) d = U32();
    // Checked against what is left before allocating; saturates so huge
    // dims cannot overflow.
    const std::uint64_t limit = remaining() / 4;
    std::uint64_t count = 1;
    for (auto d : shape) {
      const auto u = static_cast<std::uint64_t>(d);
      count = (u != 0 && count > limit / u + 1) ? limit + 1 : count * u;
    }
    if (count > limit) throw WireError("truncated tensor data");
    std::vector<float> data(count);
    for (auto& f : data) f = std::bit_cast<float>(U32());
    return Tensor(std::move(shape), std::move(data));
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void Need(std::size_t n) const {
    if (remaining() < n) throw WireError("truncated payload");
  }
  std::uint64_t Le(int n) {
    Need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

FrameKind KindOf(const WireMessage& message) {
  return static_cast<FrameKind>(message.index() + 1);
}

std::size_t TensorWireSize(const Tensor& tensor) {
  return 1 + 4 * tensor.rank() + 4 * tensor.size();
}

std::vector<std::uint8_t> EncodeFrame(const WireMessage& message) {
  Writer w;
  for (auto b : kMagic) w.U8(b);
  w.U8(kWireVersion);
  w.U8(static_cast<std::uint8_t>(KindOf(message)));
  w.U32(0);  // patched below
  if (const auto* m = std::get_if<HelloMsg>(&message)) {
    w.U32(m->node);
    w.U64(m->plan_hash);
  } else if (const auto* m = std::get_if<TensorMsg>(&message)) {
    if (m->tag.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw WireError("stage tag too long");
    }
    w.U64(m->inference_id);
    w.U16(static_cast<std::uint16_t>(m->tag.size()));
    w.Bytes(m->tag);
    w.TensorData(m->tensor);
  } else if (const auto* m = std::get_if<StatsMsg>(&message)) {
    w.Bytes(PipelineStatsToJson(m->stats));
  } else if (const auto* m = std::get_if<BlobMsg>(&message)) {
    w.TensorData(m->tensor);
  }
  auto& out = w.out();
  const std::size_t length = out.size() - kFrameHeaderSize;
  if (length > std::numeric_limits<std::uint32_t>::max()) {
    throw WireError("frame payload too large");
  }
  for (int i = 0; i < 4; ++i) {
    out[6 + i] = static_cast<std::uint8_t>(length >> (8 * i));
  }
  return std::move(out);
}

FrameHeader DecodeHeader(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) throw WireError("truncated header");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw WireError("bad magic");
  }
  if (bytes[4] != kWireVersion) {
    throw WireError("unsupported version " + std::to_string(bytes[4]));
  }
  const std::uint8_t kind = bytes[5];
  if (kind < 1 || kind > 5) {
    throw WireError("unknown frame kind " + std::to_string(kind));
  }
  Reader r(bytes.subspan(6, 4));
  return {static_cast<FrameKind>(kind), r.U32()};
}

WireMessage DecodePayload(FrameKind kind, std::span<const std::uint8_t> payload) {
  Reader r(payload);
  WireMessage m;
  switch (kind) {
    case FrameKind::kHello: {
      HelloMsg h;
      h.node = r.U32();
      h.plan_hash = r.U64();
      m = h;
      break;
    }
    case FrameKind::kTensor: {
      TensorMsg t;
      t.inference_id = r.U64();
      t.tag = r.Bytes(r.U16());
      t.tensor = r.TensorData();
      m = std::move(t);
      break;
    }
    case FrameKind::kStats: {
      const std::string text = r.Bytes(r.remaining());
      try {
        m = StatsMsg{PipelineStatsFromJson(text)};
      } catch (const ParseError& e) {
        throw WireError(std::string("bad stats payload: ") + e.what());
      }
      break;
    }
    case FrameKind::kShutdown:
      m = ShutdownMsg{};
      break;
    case FrameKind::kBlob:
      m = BlobMsg{r.TensorData()};
      break;
  }
  if (r.remaining() != 0) throw WireError("trailing bytes in payload");
  return m;
}

WireMessage DecodeFrame(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = DecodeHeader(bytes);
  const auto rest = bytes.subspan(kFrameHeaderSize);
  if (rest.size() < h.length) throw WireError("truncated payload");
  if (rest.size() > h.length) throw WireError("trailing bytes after frame");
  return DecodePayload(h.kind, rest);
}

void WriteTensorFile(const std::string& path, const std::vector<Tensor>& tensors) {
  std::string out;
  for (const auto& t : tensors) {
    const auto f = EncodeFrame(BlobMsg{t});
    out.append(reinterpret_cast<const char*>(f.data()), f.size());
  }
  WriteFile(path, out);
}

std::vector<Tensor> ReadTensorFile(const std::string& path) {
  const std::string text = ReadFile(path);
  std::span<const std::uint8_t> bytes(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  std::vector<Tensor> out;
  while (!bytes.empty()) {
    const FrameHeader h = DecodeHeader(bytes);
    if (bytes.size() - kFrameHeaderSize < h.length) {
      throw WireError(path + ": truncated payload");
    }
    if (h.kind != FrameKind::kBlob) throw WireError(path + ": expected tensor frame");
    out.push_back(std::get<BlobMsg>(DecodePayload(
                                        h.kind, bytes.subspan(kFrameHeaderSize, h.length)))
                      .tensor);
    bytes = bytes.subspan(kFrameHeaderSize + h.length);
  }
  return out;
}

}  // namespace cdnn
