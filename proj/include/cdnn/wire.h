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

// Framed messages exchanged between pipeline processes. Every frame is
//
//   "CDNN" | version u8 (=1) | kind u8 | payload length u32 LE | payload
//
// Payloads by kind:
//   1 Hello     node u32 LE, plan hash u64 LE
//   2 Tensor    inference id u64 LE, tag length u16 LE, tag bytes, tensor
//   3 Stats     PipelineStats JSON text
//   4 Shutdown  empty
//   5 Blob      tensor only (tensor files hold a sequence of these)
//
// A tensor is rank u8, each dim u32 LE, then the values as f32 LE, row-major.

#ifndef CDNN_WIRE_H_
#define CDNN_WIRE_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cdnn/stats.h"
#include "cdnn/tensor.h"

namespace cdnn {

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 10;
// Sender id the driver uses in its Hello.
inline constexpr std::uint32_t kDriverNodeId = 0xFFFFFFFFu;

enum class FrameKind : std::uint8_t {
  kHello = 1,
  kTensor = 2,
  kStats = 3,
  kShutdown = 4,
  kBlob = 5,
};

struct HelloMsg {
  std::uint32_t node = 0;
  std::uint64_t plan_hash = 0;
  bool operator==(const HelloMsg&) const = default;
};

struct TensorMsg {
  std::uint64_t inference_id = 0;
  std::string tag;
  Tensor tensor;
  bool operator==(const TensorMsg&) const = default;
};

struct StatsMsg {
  PipelineStats stats;
  bool operator==(const StatsMsg&) const = default;
};

struct ShutdownMsg {
  bool operator==(const ShutdownMsg&) const = default;
};

struct BlobMsg {
  Tensor tensor;
  bool operator==(const BlobMsg&) const = default;
};

using WireMessage =
    std::variant<HelloMsg, TensorMsg, StatsMsg, ShutdownMsg, BlobMsg>;

FrameKind KindOf(const WireMessage& message);

std::vector<std::uint8_t> EncodeFrame(const WireMessage& message);

struct FrameHeader {
  FrameKind kind = FrameKind::kShutdown;
  std::uint32_t length = 0;
};

// Validates magic, version and kind. Throws WireError.
FrameHeader DecodeHeader(std::span<const std::uint8_t> bytes);

// Decodes a payload whose header has already been read.
WireMessage DecodePayload(FrameKind kind, std::span<const std::uint8_t> payload);

// Decodes exactly one frame; trailing bytes are an error.
WireMessage DecodeFrame(std::span<const std::uint8_t> bytes);

// Size of the tensor encoding (rank, dims and values).
std::size_t TensorWireSize(const Tensor& tensor);

// Tensor files: one Blob frame per tensor. Throw IoError or WireError.
void WriteTensorFile(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> ReadTensorFile(const std::string& path);

}  // namespace cdnn

#endif  // CDNN_WIRE_H_
