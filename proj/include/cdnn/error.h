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

#ifndef CDNN_ERROR_H_
#define CDNN_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdnn {

// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (model description, plan file, CLI values). Carries a
// 1-based line and column when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line = 0,
             std::size_t column = 0);

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  // The message without the position prefix.
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  std::size_t line_;
  std::size_t column_;
};

// Tensor or layer shapes that do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A request that is well formed but not applicable (e.g. a split method that
// does not match the layer kind, or a degree larger than the dimension).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// The planner cannot produce an assignment under the given constraints.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Wire-format decoding failures.
class WireError : public Error {
 public:
  using Error::Error;
};

// Socket, process and file failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdnn

#endif  // CDNN_ERROR_H_
