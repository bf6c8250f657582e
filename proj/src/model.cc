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

#include <charconv>
#include <fstream>
#include <map>
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

void Require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

std::string PaddingToString(const Padding& p) {
  switch (p.kind) {
    case PaddingKind::kSame:
      return "same";
    case PaddingKind::kValid:
      return "valid";
    case PaddingKind::kExplicit:
      return std::to_string(p.amount);
  }
  return "?";
}

}  // namespace

std::int64_t Padding::For(std::int64_t k) const {
  switch (kind) {
    case PaddingKind::kSame:
      return k / 2;
    case PaddingKind::kValid:
      return 0;
    case PaddingKind::kExplicit:
      return amount;
  }
  return 0;
}

std::int64_t ConvOutputExtent(std::int64_t in, std::int64_t kernel,
                              std::int64_t stride, std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

std::int64_t Conv2DLayer::h_out() const {
  return ConvOutputExtent(h_in, kernel, stride, padding.For(kernel));
}
std::int64_t Conv2DLayer::w_out() const {
  return ConvOutputExtent(w_in, kernel, stride, padding.For(kernel));
}
std::int64_t Conv3DLayer::d_out() const {
  return ConvOutputExtent(d_in, kernel_depth, stride,
                          padding.For(kernel_depth));
}
std::int64_t Conv3DLayer::h_out() const {
  return ConvOutputExtent(h_in, kernel, stride, padding.For(kernel));
}
std::int64_t Conv3DLayer::w_out() const {
  return ConvOutputExtent(w_in, kernel, stride, padding.For(kernel));
}

void ValidateLayer(const LayerSpec& layer) {
  std::visit(
      Overloaded{
          [](const DenseLayer& l) {
            Require(l.input_dim > 0 && l.output_dim > 0,
                    "dense dimensions must be positive");
          },
          [](const Conv2DLayer& l) {
            Require(l.h_in > 0 && l.w_in > 0 && l.c_in > 0,
                    "conv2d input extents must be positive");
            Require(l.filters > 0 && l.kernel > 0,
                    "conv2d filters and kernel must be positive");
            Require(l.stride >= 1, "conv2d stride must be >= 1");
            Require(l.padding.kind != PaddingKind::kSame || l.kernel % 2 == 1,
                    "conv2d with same padding needs an odd kernel, got f=" +
                        std::to_string(l.kernel));
            Require(l.padding.amount >= 0, "negative padding");
          },
          [](const Conv3DLayer& l) {
            Require(l.d_in > 0 && l.h_in > 0 && l.w_in > 0 && l.c_in > 0,
                    "conv3d input extents must be positive");
            Require(l.filters > 0 && l.kernel > 0 && l.kernel_depth > 0,
                    "conv3d filters and kernel must be positive");
            Require(l.stride >= 1, "conv3d stride must be >= 1");
            Require(l.padding.kind != PaddingKind::kSame ||
                        (l.kernel % 2 == 1 && l.kernel_depth % 2 == 1),
                    "conv3d with same padding needs odd kernels");
            Require(l.padding.amount >= 0, "negative padding");
          },
          [](const Pool2DLayer& l) {
            Require(l.window > 0 && l.stride > 0,
                    "pool window and stride must be positive");
          },
          [](const ActivationLayer&) {},
          [](const FlattenLayer&) {},
          [](const OpaqueLayer& l) {
            Require(l.latency_s >= 0.0 && l.mem_bytes >= 0,
                    "opaque latency and memory must be non-negative");
          },
      },
      layer);
}

Shape LayerOutputShape(const LayerSpec& layer, const Shape& in) {
  auto expect = [&](bool ok, const std::string& want) {
    if (!ok) {
      throw ShapeError(LayerKindName(layer) + " expects " + want + ", got " +
                       ShapeToString(in));
    }
  };
  auto positive = [&](const Shape& s) {
    for (auto d : s) {
      if (d <= 0) {
        throw ShapeError(LayerKindName(layer) + " produces non-positive shape " +
                         ShapeToString(s) + " from " + ShapeToString(in));
      }
    }
    return s;
  };
  return std::visit(
      Overloaded{
          [&](const DenseLayer& l) -> Shape {
            expect(in == Shape{l.input_dim},
                   "input [" + std::to_string(l.input_dim) + "]");
            return {l.output_dim};
          },
          [&](const Conv2DLayer& l) -> Shape {
            expect(in == Shape{l.h_in, l.w_in, l.c_in},
                   ShapeToString({l.h_in, l.w_in, l.c_in}));
            return positive({l.h_out(), l.w_out(), l.filters});
          },
          [&](const Conv3DLayer& l) -> Shape {
            expect(in == Shape{l.d_in, l.h_in, l.w_in, l.c_in},
                   ShapeToString({l.d_in, l.h_in, l.w_in, l.c_in}));
            return positive({l.d_out(), l.h_out(), l.w_out(), l.filters});
          },
          [&](const Pool2DLayer& l) -> Shape {
            expect(in.size() == 3, "a rank-3 HxWxC input");
            return positive({ConvOutputExtent(in[0], l.window, l.stride, 0),
                             ConvOutputExtent(in[1], l.window, l.stride, 0),
                             in[2]});
          },
          [&](const ActivationLayer&) -> Shape { return in; },
          [&](const FlattenLayer&) -> Shape { return {NumElements(in)}; },
          [&](const OpaqueLayer&) -> Shape { return in; },
      },
      layer);
}

std::vector<Shape> InferShapes(const ModelGraph& graph) {
  std::vector<Shape> out;
  out.reserve(graph.layers.size());
  Shape cur = graph.input_shape;
  for (const auto& layer : graph.layers) {
    cur = LayerOutputShape(layer, cur);
    out.push_back(cur);
  }
  return out;
}

std::vector<Shape> LayerInputShapes(const ModelGraph& graph) {
  std::vector<Shape> in;
  in.reserve(graph.layers.size());
  Shape cur = graph.input_shape;
  for (const auto& layer : graph.layers) {
    in.push_back(cur);
    cur = LayerOutputShape(layer, cur);
  }
  return in;
}

std::int64_t ParamCount(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const DenseLayer& l) -> std::int64_t {
            return l.input_dim * l.output_dim + (l.has_bias ? l.output_dim : 0);
          },
          [](const Conv2DLayer& l) -> std::int64_t {
            return l.filters * l.c_in * l.kernel * l.kernel +
                   (l.has_bias ? l.filters : 0);
          },
          [](const Conv3DLayer& l) -> std::int64_t {
            return l.filters * l.c_in * l.kernel * l.kernel * l.kernel_depth +
                   (l.has_bias ? l.filters : 0);
          },
          [](const auto&) -> std::int64_t { return 0; },
      },
      layer);
}

std::int64_t ParamCount(const ModelGraph& graph) {
  std::int64_t total = 0;
  for (const auto& l : graph.layers) total += ParamCount(l);
  return total;
}

bool HasWeights(const LayerSpec& layer) {
  return std::holds_alternative<DenseLayer>(layer) ||
         std::holds_alternative<Conv2DLayer>(layer) ||
         std::holds_alternative<Conv3DLayer>(layer);
}

bool IsAnchorLayer(const LayerSpec& layer) {
  return HasWeights(layer) || std::holds_alternative<OpaqueLayer>(layer);
}

std::string LayerKindName(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const DenseLayer&) -> std::string { return "dense"; },
          [](const Conv2DLayer&) -> std::string { return "conv2d"; },
          [](const Conv3DLayer&) -> std::string { return "conv3d"; },
          [](const Pool2DLayer& l) -> std::string {
            return l.kind == PoolKind::kMax ? "maxpool" : "avgpool";
          },
          [](const ActivationLayer& l) -> std::string {
            switch (l.kind) {
              case ActivationKind::kReLU:
                return "relu";
              case ActivationKind::kSigmoid:
                return "sigmoid";
              case ActivationKind::kIdentity:
                return "identity";
            }
            return "activation";
          },
          [](const FlattenLayer&) -> std::string { return "flatten"; },
          [](const OpaqueLayer&) -> std::string { return "opaque"; },
      },
      layer);
}

std::string FormatLayer(const LayerSpec& layer) {
  std::ostringstream os;
  os << LayerKindName(layer);
  std::visit(Overloaded{
                 [&](const DenseLayer& l) {
                   os << " out=" << l.output_dim;
                   if (l.has_bias) os << " bias=1";
                 },
                 [&](const Conv2DLayer& l) {
                   os << " k=" << l.filters << " f=" << l.kernel
                      << " s=" << l.stride
                      << " pad=" << PaddingToString(l.padding);
                   if (l.has_bias) os << " bias=1";
                 },
                 [&](const Conv3DLayer& l) {
                   os << " k=" << l.filters << " f=" << l.kernel
                      << " fd=" << l.kernel_depth << " s=" << l.stride
                      << " pad=" << PaddingToString(l.padding);
                   if (l.has_bias) os << " bias=1";
                 },
                 [&](const Pool2DLayer& l) {
                   os << " w=" << l.window << " s=" << l.stride;
                 },
                 [&](const OpaqueLayer& l) {
                   os << " latency=" << FormatDouble(l.latency_s)
                      << " mem=" << l.mem_bytes;
                 },
                 [&](const auto&) {},
             },
             layer);
  return os.str();
}

std::string LayerSignature(const LayerSpec& layer) {
  std::ostringstream os;
  os << LayerKindName(layer);
  std::visit(Overloaded{
                 [&](const DenseLayer& l) {
                   os << ' ' << l.input_dim << "->" << l.output_dim;
                   if (l.has_bias) os << " bias";
                 },
                 [&](const Conv2DLayer& l) {
                   os << ' ' << ShapeToString({l.h_in, l.w_in, l.c_in})
                      << " k=" << l.filters << " f=" << l.kernel
                      << " s=" << l.stride
                      << " pad=" << PaddingToString(l.padding);
                   if (l.has_bias) os << " bias";
                 },
                 [&](const Conv3DLayer& l) {
                   os << ' ' << ShapeToString({l.d_in, l.h_in, l.w_in, l.c_in})
                      << " k=" << l.filters << " f=" << l.kernel
                      << " fd=" << l.kernel_depth << " s=" << l.stride
                      << " pad=" << PaddingToString(l.padding);
                   if (l.has_bias) os << " bias";
                 },
                 [&](const Pool2DLayer& l) {
                   os << " w=" << l.window << " s=" << l.stride;
                 },
                 [&](const OpaqueLayer& l) {
                   os << " latency=" << FormatDouble(l.latency_s)
                      << " mem=" << l.mem_bytes;
                 },
                 [&](const auto&) {},
             },
             layer);
  return os.str();
}

std::int64_t ParseByteSize(std::string_view text) {
  std::string_view digits = text;
  std::int64_t scale = 1;
  static const std::pair<std::string_view, std::int64_t> kSuffixes[] = {
      {"GB", 1LL << 30}, {"MB", 1LL << 20}, {"KB", 1LL << 10}, {"B", 1}};
  for (const auto& [suffix, mult] : kSuffixes) {
    if (digits.size() > suffix.size() && digits.ends_with(suffix)) {
      digits.remove_suffix(suffix.size());
      scale = mult;
      break;
    }
  }
  // Accept fractional sizes such as 1.5GB.
  double value = 0.0;
  auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || value < 0) {
    throw ParseError("bad size '" + std::string(text) + "'");
  }
  return static_cast<std::int64_t>(value * static_cast<double>(scale));
}

namespace {

// Key/value options of one layer line, with the column of each value for
// error reporting.
class LineOptions {
 public:
  LineOptions(const std::vector<Token>& tokens, std::size_t line)
      : line_(line) {
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      auto eq = t.text.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError("expected key=value, got '" + t.text + "'", line,
                         t.column);
      }
      std::string key = t.text.substr(0, eq);
      if (values_.count(key)) {
        throw ParseError("duplicate option '" + key + "'", line, t.column);
      }
      values_[key] = {t.text.substr(eq + 1), t.column + eq + 1};
    }
  }

  std::int64_t Int(const std::string& key, std::optional<std::int64_t> def) {
    auto it = values_.find(key);
    if (it == values_.end()) return Missing(key, def);
    used_.push_back(key);
    std::int64_t v = 0;
    const auto& s = it->second.first;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError("option '" + key + "' expects an integer, got '" + s +
                           "'",
                       line_, it->second.second);
    }
    return v;
  }

  double Real(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return Missing<double>(key, std::nullopt);
    used_.push_back(key);
    try {
      return ParseDouble(it->second.first);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_, it->second.second);
    }
  }

  std::int64_t Bytes(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return Missing<std::int64_t>(key, std::nullopt);
    used_.push_back(key);
    try {
      return ParseByteSize(it->second.first);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_, it->second.second);
    }
  }

  Padding Pad() {
    auto it = values_.find("pad");
    if (it == values_.end()) return {};
    used_.push_back("pad");
    const auto& s = it->second.first;
    if (s == "same") return {PaddingKind::kSame, 0};
    if (s == "valid") return {PaddingKind::kValid, 0};
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) {
      throw ParseError("pad expects same, valid or a count, got '" + s + "'",
                       line_, it->second.second);
    }
    return {PaddingKind::kExplicit, v};
  }

  // Rejects options nobody asked for.
  void Finish() {
    for (const auto& [key, val] : values_) {
      bool used = false;
      for (const auto& u : used_) used |= (u == key);
      if (!used) {
        throw ParseError("unknown option '" + key + "'", line_,
                         val.second - key.size() - 1);
      }
    }
  }

 private:
  template <class T>
  T Missing(const std::string& key, std::optional<T> def) {
    if (def) return *def;
    throw ParseError("missing required option '" + key + "'", line_, 1);
  }

  std::size_t line_;
  std::map<std::string, std::pair<std::string, std::size_t>> values_;
  std::vector<std::string> used_;
};

LayerSpec ParseLayerLine(const std::vector<Token>& tokens, std::size_t line,
                         const Shape& in) {
  const std::string& kind = tokens[0].text;
  const std::size_t col = tokens[0].column;
  LineOptions opt(tokens, line);
  auto need_rank = [&](std::size_t rank) {
    if (in.size() != rank) {
      throw ParseError(kind + " expects a rank-" + std::to_string(rank) +
                           " input, previous output is " + ShapeToString(in),
                       line, col);
    }
  };
  LayerSpec layer;
  if (kind == "dense") {
    need_rank(1);
    DenseLayer l;
    l.input_dim = in[0];
    l.output_dim = opt.Int("out", std::nullopt);
    l.has_bias = opt.Int("bias", 0) != 0;
    layer = l;
  } else if (kind == "conv2d") {
    need_rank(3);
    Conv2DLayer l;
    l.h_in = in[0];
    l.w_in = in[1];
    l.c_in = in[2];
    l.filters = opt.Int("k", std::nullopt);
    l.kernel = opt.Int("f", std::nullopt);
    l.stride = opt.Int("s", 1);
    l.padding = opt.Pad();
    l.has_bias = opt.Int("bias", 0) != 0;
    layer = l;
  } else if (kind == "conv3d") {
    need_rank(4);
    Conv3DLayer l;
    l.d_in = in[0];
    l.h_in = in[1];
    l.w_in = in[2];
    l.c_in = in[3];
    l.filters = opt.Int("k", std::nullopt);
    l.kernel = opt.Int("f", std::nullopt);
    l.kernel_depth = opt.Int("fd", l.kernel);
    l.stride = opt.Int("s", 1);
    l.padding = opt.Pad();
    l.has_bias = opt.Int("bias", 0) != 0;
    layer = l;
  } else if (kind == "maxpool" || kind == "avgpool") {
    Pool2DLayer l;
    l.kind = kind == "maxpool" ? PoolKind::kMax : PoolKind::kAvg;
    l.window = opt.Int("w", 2);
    l.stride = opt.Int("s", l.window);
    layer = l;
  } else if (kind == "relu") {
    layer = ActivationLayer{ActivationKind::kReLU};
  } else if (kind == "sigmoid") {
    layer = ActivationLayer{ActivationKind::kSigmoid};
  } else if (kind == "identity") {
    layer = ActivationLayer{ActivationKind::kIdentity};
  } else if (kind == "flatten") {
    layer = FlattenLayer{};
  } else if (kind == "opaque") {
    OpaqueLayer l;
    l.latency_s = opt.Real("latency");
    l.mem_bytes = opt.Bytes("mem");
    layer = l;
  } else {
    throw ParseError("unsupported layer kind '" + kind + "'", line, col);
  }
  opt.Finish();
  try {
    ValidateLayer(layer);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what(), line, col);
  }
  return layer;
}

}  // namespace

ModelGraph ParseModel(std::string_view text) {
  ModelGraph graph;
  bool have_name = false;
  bool have_input = false;
  Shape cur;
  std::size_t line_no = 0;
  for (const auto& line : SplitLines(text)) {
    ++line_no;
    auto tokens = Tokenize(line);
    if (tokens.empty()) continue;
    const auto& head = tokens[0];
    if (!have_name) {
      if (head.text != "model" || tokens.size() != 2) {
        throw ParseError("expected 'model <name>'", line_no, head.column);
      }
      graph.name = tokens[1].text;
      have_name = true;
      continue;
    }
    if (!have_input) {
      if (head.text != "input" || tokens.size() != 2) {
        throw ParseError("expected 'input <d1>x<d2>...'", line_no, head.column);
      }
      try {
        graph.input_shape = ParseShape(tokens[1].text);
      } catch (const ParseError& e) {
        throw ParseError(e.what(), line_no, tokens[1].column);
      }
      if (graph.input_shape.empty() ||
          graph.input_shape.size() > kMaxTensorRank) {
        throw ParseError("input rank must be 1.." +
                             std::to_string(kMaxTensorRank),
                         line_no, tokens[1].column);
      }
      cur = graph.input_shape;
      have_input = true;
      continue;
    }
    LayerSpec layer = ParseLayerLine(tokens, line_no, cur);
    try {
      cur = LayerOutputShape(layer, cur);
    } catch (const ShapeError& e) {
      throw ParseError(e.what(), line_no, head.column);
    }
    graph.layers.push_back(std::move(layer));
  }
  if (!have_name) throw ParseError("empty model");
  if (!have_input) throw ParseError("missing 'input' line");
  if (graph.layers.empty()) throw ParseError("empty model");
  return graph;
}

ModelGraph LoadModel(const std::string& path) {
  return ParseModel(ReadFile(path));
}

std::string FormatModel(const ModelGraph& graph) {
  std::ostringstream os;
  os << "model " << graph.name << '\n';
  os << "input " << ShapeToString(graph.input_shape) << '\n';
  for (const auto& l : graph.layers) os << FormatLayer(l) << '\n';
  return os.str();
}

}  // namespace cdnn
