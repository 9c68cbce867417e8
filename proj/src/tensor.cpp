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

#include "gatedvlad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "gatedvlad/errors.hpp"
#include "gatedvlad/half.hpp"

namespace gatedvlad {

std::string_view precision_name(Precision p) {
  return p == Precision::kSingle ? "single" : "half";
}

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
    if (n > std::numeric_limits<std::int64_t>::max() / d) {
      throw ShapeError("element count overflows in shape " + shape_to_string(shape));
    }
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_count(const std::string& name, const Shape& shape, std::size_t n) {
  if (static_cast<std::size_t>(element_count(shape)) != n) {
    throw ShapeError("tensor '" + name + "': shape " + shape_to_string(shape) +
                     " does not match " + std::to_string(n) + " values");
  }
}

}  // namespace

Tensor::Tensor(std::string name, Shape shape, std::vector<float> values)
    : name_(std::move(name)), shape_(std::move(shape)), data_(std::move(values)) {
  check_count(name_, shape_, size());
}

Tensor::Tensor(std::string name, Shape shape, std::vector<std::uint16_t> half_bits)
    : name_(std::move(name)), shape_(std::move(shape)), data_(std::move(half_bits)) {
  check_count(name_, shape_, size());
}

Tensor Tensor::zeros(std::string name, Shape shape, Precision precision) {
  const auto n = static_cast<std::size_t>(element_count(shape));
  if (precision == Precision::kSingle) {
    return Tensor(std::move(name), std::move(shape), std::vector<float>(n, 0.0f));
  }
  return Tensor(std::move(name), std::move(shape), std::vector<std::uint16_t>(n, 0));
}

Precision Tensor::precision() const {
  return std::holds_alternative<std::vector<float>>(data_) ? Precision::kSingle
                                                           : Precision::kHalf;
}

std::size_t Tensor::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

float Tensor::value(std::size_t i) const {
  if (const auto* f = std::get_if<std::vector<float>>(&data_)) return (*f)[i];
  return half_bits_to_float(std::get<std::vector<std::uint16_t>>(data_)[i]);
}

std::vector<float> Tensor::to_floats() const {
  if (const auto* f = std::get_if<std::vector<float>>(&data_)) return *f;
  const auto& h = std::get<std::vector<std::uint16_t>>(data_);
  std::vector<float> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = half_bits_to_float(h[i]);
  return out;
}

std::span<const float> Tensor::single_values() const {
  const auto* f = std::get_if<std::vector<float>>(&data_);
  if (!f) throw ValidationError("tensor '" + name_ + "' is not single precision");
  return *f;
}

std::span<const std::uint16_t> Tensor::half_bits() const {
  const auto* h = std::get_if<std::vector<std::uint16_t>>(&data_);
  if (!h) throw ValidationError("tensor '" + name_ + "' is not half precision");
  return *h;
}

Tensor Tensor::renamed(std::string name) const {
  Tensor t = *this;
  t.name_ = std::move(name);
  return t;
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.name_ != b.name_ || a.shape_ != b.shape_ || a.precision() != b.precision() ||
      a.size() != b.size()) {
    return false;
  }
  return std::visit(
      [&](const auto& av) {
        using V = std::decay_t<decltype(av)>;
        const auto& bv = std::get<V>(b.data_);
        return av.empty() ||
               std::memcmp(av.data(), bv.data(), av.size() * sizeof(av[0])) == 0;
      },
      a.data_);
}

CastResult cast_precision(const Tensor& t, Precision target) {
  if (t.precision() == target) return {t, 0};
  if (target == Precision::kSingle) {
    return {Tensor(t.name(), t.shape(), t.to_floats()), 0};
  }
  const auto src = t.single_values();
  std::vector<std::uint16_t> bits(src.size());
  std::size_t overflows = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    bits[i] = float_to_half_bits(src[i]);
    if (std::isfinite(src[i]) && half_bits_is_inf(bits[i])) ++overflows;
  }
  return {Tensor(t.name(), t.shape(), std::move(bits)), overflows};
}

}  // namespace gatedvlad
