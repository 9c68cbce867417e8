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

#include "gatedvlad/binary_io.hpp"

#include <array>
#include <bit>

#include "gatedvlad/errors.hpp"

namespace gatedvlad::io {

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> buf;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  }
  out.write(buf.data(), buf.size());
}

template <typename T>
T get_le(const char* buf) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(buf[i])) << (8 * i);
  }
  return v;
}

}  // namespace

void ByteWriter::u8(std::uint8_t v) {
  out_.put(static_cast<char>(v));
  written_ += 1;
}
void ByteWriter::u16(std::uint16_t v) {
  put_le(out_, v);
  written_ += 2;
}
void ByteWriter::u32(std::uint32_t v) {
  put_le(out_, v);
  written_ += 4;
}
void ByteWriter::u64(std::uint64_t v) {
  put_le(out_, v);
  written_ += 8;
}
void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::bytes(std::string_view data) {
  out_.write(data.data(), static_cast<std::streamsize>(data.size()));
  written_ += data.size();
}

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void ByteWriter::f32_array(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()));
    written_ += values.size_bytes();
  } else {
    for (float v : values) f32(v);
  }
}

void ByteWriter::u16_array(std::span<const std::uint16_t> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size_bytes()));
    written_ += values.size_bytes();
  } else {
    for (auto v : values) u16(v);
  }
}

void ByteReader::read_exact(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw CorruptionError(context_ + ": unexpected end of stream");
  }
}

std::uint8_t ByteReader::u8() {
  char c;
  read_exact(&c, 1);
  return static_cast<std::uint8_t>(c);
}
std::uint16_t ByteReader::u16() {
  char buf[2];
  read_exact(buf, 2);
  return get_le<std::uint16_t>(buf);
}
std::uint32_t ByteReader::u32() {
  char buf[4];
  read_exact(buf, 4);
  return get_le<std::uint32_t>(buf);
}
std::uint64_t ByteReader::u64() {
  char buf[8];
  read_exact(buf, 8);
  return get_le<std::uint64_t>(buf);
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::bytes(std::size_t n) {
  std::string s(n, '\0');
  read_exact(s.data(), n);
  return s;
}

std::string ByteReader::string(std::uint32_t max_length) {
  const std::uint32_t n = u32();
  if (n > max_length) {
    throw CorruptionError(context_ + ": string length " + std::to_string(n) +
                          " exceeds limit");
  }
  return bytes(n);
}

void ByteReader::f32_array(std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    read_exact(reinterpret_cast<char*>(out.data()), out.size_bytes());
  } else {
    for (auto& v : out) v = f32();
  }
}

void ByteReader::u16_array(std::span<std::uint16_t> out) {
  if constexpr (std::endian::native == std::endian::little) {
    read_exact(reinterpret_cast<char*>(out.data()), out.size_bytes());
  } else {
    for (auto& v : out) v = u16();
  }
}

bool ByteReader::at_end() {
  return in_.peek() == std::istream::traits_type::eof();
}

}  // namespace gatedvlad::io
