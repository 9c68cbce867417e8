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

#ifndef GATEDVLAD_HALF_HPP_
#define GATEDVLAD_HALF_HPP_

#include <cstdint>

namespace gatedvlad {

// IEEE-754 binary16 bit patterns. Conversions are bit-level so results do
// not depend on compiler support for a native half type.

inline constexpr float kHalfMax = 65504.0f;

// Round-to-nearest-even. Subnormals are produced, not flushed. Finite inputs
// too large for binary16 map to a signed infinity; NaN stays NaN.
std::uint16_t float_to_half_bits(float value);

// Exact widening.
float half_bits_to_float(std::uint16_t bits);

inline bool half_bits_is_inf(std::uint16_t bits) {
  return (bits & 0x7fffu) == 0x7c00u;
}

}  // namespace gatedvlad

#endif  // GATEDVLAD_HALF_HPP_
