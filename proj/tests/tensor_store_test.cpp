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


#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gatedvlad/bundle.hpp"
#include "gatedvlad/errors.hpp"
#include "gatedvlad/half.hpp"
#include "gatedvlad/tensor.hpp"
#include "test_util.hpp"

namespace gatedvlad {
namespace {

using testing::decode_half;
using testing::nearest_half_oracle;

TEST(Precision, BytesPerElement) {
  EXPECT_EQ(bytes_per_element(Precision::kSingle), 4u);
  EXPECT_EQ(bytes_per_element(Precision::kHalf), 2u);
}

TEST(HalfCast, OneIsExact) {
  auto r = cast_precision(Tensor("x", {1}, std::vector<float>{1.0f}), Precision::kHalf);
  EXPECT_EQ(r.tensor.value(0), 1.0f);
  EXPECT_EQ(r.overflow_count, 0u);
}

TEST(HalfCast, PointOneRoundsToNearestHalf) {
  auto r = cast_precision(Tensor("x", {1}, std::vector<float>{0.1f}), Precision::kHalf);
  EXPECT_EQ(static_cast<double>(r.tensor.value(0)), 0.0999755859375);
  EXPECT_EQ(r.tensor.half_bits()[0], nearest_half_oracle(0.1f));
}

TEST(HalfCast, OverflowBecomesInfinityAndIsCounted) {
  auto r = cast_precision(Tensor("x", {2}, std::vector<float>{70000.0f, -70000.0f}),
                          Precision::kHalf);
  EXPECT_EQ(r.tensor.value(0), std::numeric_limits<float>::infinity());
  EXPECT_EQ(r.tensor.value(1), -std::numeric_limits<float>::infinity());
  EXPECT_EQ(r.overflow_count, 2u);
}

TEST(HalfCast, LargestFiniteHalfSurvives) {
  auto r = cast_precision(Tensor("x", {1}, std::vector<float>{65504.0f}), Precision::kHalf);
  EXPECT_EQ(r.tensor.value(0), 65504.0f);
  EXPECT_EQ(r.overflow_count, 0u);
}

TEST(HalfCast, NanStaysNan) {
  const std::uint16_t bits = float_to_half_bits(std::numeric_limits<float>::quiet_NaN());
  EXPECT_TRUE(std::isnan(half_bits_to_float(bits)));
}

TEST(HalfCast, WideningIsExactForEveryPattern) {
  for (std::uint32_t b = 0; b <= 0xffff; ++b) {
    const auto bits = static_cast<std::uint16_t>(b);
    const double expected = decode_half(bits);
    const float got = half_bits_to_float(bits);
    if (std::isnan(expected)) {
      EXPECT_TRUE(std::isnan(got)) << b;
    } else {
      ASSERT_EQ(static_cast<double>(got), expected) << b;
      if (expected == 0.0) EXPECT_EQ(std::signbit(got), (b & 0x8000) != 0);
    }
  }
}

TEST(HalfCast, NarrowingRoundTripsEveryNonNanPattern) {
  for (std::uint32_t b = 0; b <= 0xffff; ++b) {
    const auto bits = static_cast<std::uint16_t>(b);
    if (std::isnan(decode_half(bits))) continue;
    ASSERT_EQ(float_to_half_bits(half_bits_to_float(bits)), bits) << b;
  }
}

// Around every midpoint between adjacent halves: the midpoint itself goes
// to the even neighbour and one float ulp either side goes to the nearer.
TEST(HalfCast, MidpointsTieToEven) {
  for (std::uint32_t lo = 0; lo < 0x7c00; ++lo) {
    const double a = decode_half(static_cast<std::uint16_t>(lo));
    const double b = lo + 1 == 0x7c00 ? 65536.0 : decode_half(static_cast<std::uint16_t>(lo + 1));
    const float mid = static_cast<float>((a + b) / 2);
    ASSERT_EQ(static_cast<double>(mid), (a + b) / 2);
    const std::uint16_t even = (lo & 1u) ? static_cast<std::uint16_t>(lo + 1)
                                         : static_cast<std::uint16_t>(lo);
    for (float sign : {1.0f, -1.0f}) {
      const std::uint16_t s = sign < 0 ? 0x8000 : 0;
      ASSERT_EQ(float_to_half_bits(sign * mid), s | even) << lo;
      ASSERT_EQ(float_to_half_bits(sign * std::nextafter(mid, 0.0f)), s | lo) << lo;
      ASSERT_EQ(float_to_half_bits(sign * std::nextafter(mid, 1e9f)), s | (lo + 1)) << lo;
    }
  }
}

TEST(HalfCast, MatchesBruteForceOracleOnRandomValues) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> exponent(-27.0, 17.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int i = 0; i < 2000; ++i) {
    float x = static_cast<float>(std::exp2(exponent(rng)));
    if (coin(rng)) x = -x;
    ASSERT_EQ(float_to_half_bits(x), nearest_half_oracle(x)) << x;
  }
}

TEST(HalfCast, CastIsIdempotent) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 100.0f);
  std::vector<float> v(4096);
  for (auto& x : v) x = n(rng);
  auto once = cast_precision(Tensor("t", {64, 64}, v), Precision::kHalf).tensor;
  auto twice = cast_precision(once, Precision::kHalf).tensor;
  EXPECT_EQ(once, twice);
  auto back = cast_precision(cast_precision(once, Precision::kSingle).tensor,
                             Precision::kHalf).tensor;
  EXPECT_EQ(once, back);
}

TEST(HalfCast, ErrorBoundHolds) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> exponent(-30.0, 15.99);
  for (int i = 0; i < 200000; ++i) {
    const float x = static_cast<float>(std::exp2(exponent(rng)));
    ASSERT_LE(std::abs(x), kHalfMax);
    const double err = std::abs(static_cast<double>(half_bits_to_float(float_to_half_bits(x))) - x);
    ASSERT_LE(err, std::max(std::exp2(-24.0), std::exp2(-11.0) * std::abs(x))) << x;
  }
}

TEST(HalfCast, SingleToSingleIsIdentity) {
  Tensor t("a", {3}, std::vector<float>{1.5f, -2.0f, 1e-30f});
  auto r = cast_precision(t, Precision::kSingle);
  EXPECT_EQ(r.tensor, t);
  EXPECT_EQ(r.overflow_count, 0u);
}

TEST(TensorShape, RejectsMismatchedPayload) {
  EXPECT_THROW(Tensor("a", {2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor("a", {0, 3}, std::vector<float>{}), ShapeError);
}

TEST(TensorShape, ElementCountOverflowIsRejected) {
  EXPECT_THROW(element_count({1ll << 40, 1ll << 40}), ShapeError);
}

// ---------------------------------------------------------------------------

TensorBundle random_bundle(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 6), rank(0, 3), dim(1, 5), coin(0, 1);
  std::normal_distribution<float> value(0.0f, 10.0f);
  TensorBundle b;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    Shape shape(rank(rng));
    for (auto& d : shape) d = dim(rng);
    std::vector<float> v(static_cast<std::size_t>(element_count(shape)));
    for (auto& x : v) x = value(rng);
    Tensor t("t" + std::to_string(i) + "/w", shape, v);
    b.add(coin(rng) ? cast_precision(t, Precision::kHalf).tensor : t);
  }
  const int m = count(rng);
  for (int i = 0; i < m; ++i) b.metadata()["k" + std::to_string(i)] = std::to_string(rng());
  return b;
}

std::string serialize(const TensorBundle& b) {
  std::ostringstream out(std::ios::binary);
  write_bundle(b, out);
  return out.str();
}

TensorBundle deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_bundle(in);
}

TEST(Bundle, RandomRoundTripIsByteExact) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 300; ++i) {
    const TensorBundle b = random_bundle(rng);
    const std::string bytes = serialize(b);
    const TensorBundle back = deserialize(bytes);
    ASSERT_EQ(back, b);
    ASSERT_EQ(serialize(back), bytes);
  }
}

TEST(Bundle, MixedPrecisionTagsSurvive) {
  TensorBundle b;
  b.add(Tensor("single", {2}, std::vector<float>{1.0f, 2.0f}));
  b.add(cast_precision(Tensor("half", {2}, std::vector<float>{3.0f, 4.0f}), Precision::kHalf)
            .tensor);
  const TensorBundle back = deserialize(serialize(b));
  EXPECT_EQ(back.at("single").precision(), Precision::kSingle);
  EXPECT_EQ(back.at("half").precision(), Precision::kHalf);
  EXPECT_EQ(back, b);
}

TEST(Bundle, LayoutIsLittleEndianWithExpectedHeader) {
  TensorBundle b;
  b.metadata()["s"] = "7";
  b.add(Tensor("w", {2}, std::vector<float>{1.0f, -2.0f}));
  const std::string bytes = serialize(b);
  const unsigned char expected[] = {
      'T', 'B', 'N', 'D', 1, 0,                   // magic, version
      1, 0, 0, 0,                                 // metadata count
      1, 0, 0, 0, 's', 1, 0, 0, 0, '7',           // key, value
      1, 0, 0, 0,                                 // tensor count
      1, 0, 0, 0, 'w', 0, 1,                      // name, precision, rank
      2, 0, 0, 0, 0, 0, 0, 0,                     // dim
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  ASSERT_EQ(bytes.size(), sizeof(expected));
  EXPECT_EQ(std::memcmp(bytes.data(), expected, sizeof(expected)), 0);
}

TEST(Bundle, WrongMagicIsFormatError) {
  std::string bytes = serialize(TensorBundle{});
  bytes[0] = 'X';
  EXPECT_THROW(deserialize(bytes), FormatError);
}

TEST(Bundle, WrongVersionIsFormatError) {
  std::string bytes = serialize(TensorBundle{});
  bytes[4] = 2;
  EXPECT_THROW(deserialize(bytes), FormatError);
}

TEST(Bundle, UnknownPrecisionTagIsFormatError) {
  TensorBundle b;
  b.add(Tensor("w", {1}, std::vector<float>{1.0f}));
  std::string bytes = serialize(b);
  bytes[6 + 4 + 4 + 4 + 1] = 9;
  EXPECT_THROW(deserialize(bytes), FormatError);
}

TEST(Bundle, EveryTruncationIsDetected) {
  TensorBundle b;
  b.metadata()["step"] = "10";
  b.add(Tensor("a", {2, 2}, std::vector<float>{1, 2, 3, 4}));
  b.add(cast_precision(Tensor("b", {3}, std::vector<float>{1, 2, 3}), Precision::kHalf).tensor);
  const std::string bytes = serialize(b);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    const std::string cut = bytes.substr(0, n);
    if (n < 4) {
      EXPECT_THROW(deserialize(cut), FormatError) << n;
    } else {
      EXPECT_THROW(deserialize(cut), CorruptionError) << n;
    }
  }
}

TEST(Bundle, DuplicateNameIsValidationError) {
  TensorBundle b;
  b.add(Tensor("a", {1}, std::vector<float>{1.0f}));
  EXPECT_THROW(b.add(Tensor("a", {1}, std::vector<float>{2.0f})), ValidationError);

  TensorBundle two;
  two.add(Tensor("a", {1}, std::vector<float>{1.0f}));
  two.add(Tensor("b", {1}, std::vector<float>{2.0f}));
  std::string bytes = serialize(two);
  const auto pos = bytes.rfind('b');
  bytes[pos] = 'a';
  EXPECT_THROW(deserialize(bytes), ValidationError);
}

TEST(Bundle, ImplausibleDimensionIsCorruption) {
  TensorBundle b;
  b.add(Tensor("a", {1}, std::vector<float>{1.0f}));
  std::string bytes = serialize(b);
  const std::size_t dim_at = 6 + 4 + 4 + 4 + 1 + 1 + 1;
  for (int i = 0; i < 8; ++i) bytes[dim_at + i] = static_cast<char>(0xff);
  EXPECT_THROW(deserialize(bytes), CorruptionError);
}

TEST(Bundle, IterationIsLexicographic) {
  TensorBundle b;
  b.add(Tensor("z", {1}, std::vector<float>{1.0f}));
  b.add(Tensor("a", {1}, std::vector<float>{1.0f}));
  b.add(Tensor("m/x", {1}, std::vector<float>{1.0f}));
  EXPECT_EQ(b.names(), (std::vector<std::string>{"a", "m/x", "z"}));
}

TEST(BundleSize, Examples) {
  EXPECT_EQ(bundle_size_bytes(TensorBundle{}), 0u);
  TensorBundle b;
  Tensor t("w", {10, 10}, std::vector<float>(100, 0.5f));
  b.add(t);
  EXPECT_EQ(bundle_size_bytes(b), 400u);
  TensorBundle h;
  h.add(cast_precision(t, Precision::kHalf).tensor);
  EXPECT_EQ(bundle_size_bytes(h), 200u);
}

TEST(BundleSize, MetadataIsNotCounted) {
  TensorBundle b;
  b.add(Tensor("w", {3}, std::vector<float>(3)));
  b.metadata()["long"] = std::string(1000, 'x');
  EXPECT_EQ(bundle_size_bytes(b), 12u);
}

}  // namespace
}  // namespace gatedvlad
