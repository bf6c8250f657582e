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

// Small helpers shared by the line-oriented text formats.

#ifndef CDNN_TEXT_UTIL_H_
#define CDNN_TEXT_UTIL_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cdnn/tensor.h"

namespace cdnn {

struct Token {
  std::string text;
  std::size_t column;  // 1-based
};

std::vector<std::string_view> SplitLines(std::string_view text);

// Whitespace-separated tokens of one line; everything after '#' is dropped.
std::vector<Token> Tokenize(std::string_view line);

// "224x224x3" -> {224, 224, 3}. Dimensions must be positive.
Shape ParseShape(std::string_view text);

double ParseDouble(std::string_view text);
std::int64_t ParseInt(std::string_view text);

// Shortest representation that round-trips.
std::string FormatDouble(double value);

std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, std::string_view contents);

std::uint64_t Fnv1a64(std::string_view bytes);

}  // namespace cdnn

#endif  // CDNN_TEXT_UTIL_H_
