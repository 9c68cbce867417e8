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

#ifndef GATEDVLAD_TENSOR_HPP_
#define GATEDVLAD_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace gatedvlad {

enum class Precision : std::uint8_t { kSingle = 0, kHalf = 1 };

constexpr std::size_t bytes_per_element(Precision p) {
  return p == Precision::kSingle ? 4 : 2;
}

std::string_view precision_name(Precision p);

using Shape = std::vector<std::int64_t>;

// Number of elements implied by `shape`. Rank 0 is a scalar.
std::int64_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Named dense row-major array with an explicit storage precision. Half
// tensors hold raw binary16 bit patterns. Immutable after construction.
class Tensor {
 public:
  Tensor() = default;
  // Throws ShapeError unless product(shape) == values.size() and every
  // dimension is positive.
  Tensor(std::string name, Shape shape, std::vector<float> values);
  Tensor(std::string name, Shape shape, std::vector<std::uint16_t> half_bits);

  static Tensor zeros(std::string name, Shape shape,
                      Precision precision = Precision::kSingle);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  Precision precision() const;
  std::size_t size() const;
  std::size_t byte_size() const { return size() * bytes_per_element(precision()); }

  // Element i widened to binary32.
  float value(std::size_t i) const;
  std::vector<float> to_floats() const;

  // Direct payload access. Throws ValidationError on precision mismatch.
  std::span<const float> single_values() const;
  std::span<const std::uint16_t> half_bits() const;

  Tensor renamed(std::string name) const;

  // Bitwise comparison of name, shape, precision and payload.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  std::string name_;
  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::uint16_t>> data_;
};

struct CastResult {
  Tensor tensor;
  std::size_t overflow_count = 0;
};

// Elementwise IEEE round-to-nearest-even conversion. Casting to the current
// precision is the identity. Single->Half overflow to +-inf is counted, not
// fatal.
CastResult cast_precision(const Tensor& t, Precision target);

}  // namespace gatedvlad

#endif  // GATEDVLAD_TENSOR_HPP_
