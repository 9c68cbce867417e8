// Copyright 2026 The gatedvlad Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GATEDVLAD_ERRORS_HPP_
#define GATEDVLAD_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace gatedvlad {

// Base of every error thrown by the library. The CLI maps subclasses onto
// process exit codes: RuntimeFailure -> 3, everything else -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad magic, unsupported version or malformed header.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Stream ended early or a length field is inconsistent with the payload.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Structurally valid input that violates a contract (duplicate names,
// coefficient sums, bad config values).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Checkpoints or ensemble members that cannot be combined.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

// Unknown tensor names in a compression selection, or strict-mode overflow.
class SelectionError : public Error {
 public:
  using Error::Error;
};

// Records referring to unknown videos, empty ground truth, empty datasets.
class InputError : public Error {
 public:
  using Error::Error;
};

// Failures while executing rather than while validating input.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class TrainingError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace gatedvlad

#endif  // GATEDVLAD_ERRORS_HPP_
