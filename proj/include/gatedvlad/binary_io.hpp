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

#ifndef GATEDVLAD_BINARY_IO_HPP_
#define GATEDVLAD_BINARY_IO_HPP_

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

namespace gatedvlad::io {

// Little-endian primitive writer over an ostream. Byte order is fixed
// regardless of host so files are portable.
class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(std::string_view data);
  // u32 length prefix followed by the raw bytes.
  void string(std::string_view s);
  void f32_array(std::span<const float> values);
  void u16_array(std::span<const std::uint16_t> values);

  std::uint64_t written() const { return written_; }

 private:
  std::ostream& out_;
  std::uint64_t written_ = 0;
};

// Mirror of ByteWriter. Every short read throws CorruptionError naming
// `context`.
class ByteReader {
 public:
  ByteReader(std::istream& in, std::string context)
      : in_(in), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string bytes(std::size_t n);
  std::string string(std::uint32_t max_length = 1u << 24);
  void f32_array(std::span<float> out);
  void u16_array(std::span<std::uint16_t> out);

  // True when the underlying stream has no bytes left.
  bool at_end();

 private:
  void read_exact(char* dst, std::size_t n);

  std::istream& in_;
  std::string context_;
};

}  // namespace gatedvlad::io

#endif  // GATEDVLAD_BINARY_IO_HPP_
