/*
 * Copyright 2026 The ConVis Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace convis {

// Root of every exception thrown by the library. Callers that only need to
// distinguish "our failure" from std failures catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or payload.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Structurally invalid data: dangling references, cycles, bad dimensions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A lookup by id failed (synset, image, session, fixture key).
class NotFound : public Error {
 public:
  using Error::Error;
};

// Embedding backend failed or is unavailable.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Invalid argument at an API boundary.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Operation not allowed in the current state (e.g. answering a quiz twice).
class Conflict : public Error {
 public:
  using Error::Error;
};

}  // namespace convis
