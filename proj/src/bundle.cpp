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

#include "gatedvlad/bundle.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "gatedvlad/binary_io.hpp"
#include "gatedvlad/errors.hpp"

namespace gatedvlad {

void TensorBundle::add(Tensor t) {
  const std::string name = t.name();
  auto [it, inserted] = entries_.emplace(name, std::move(t));
  if (!inserted) throw ValidationError("duplicate tensor name '" + name + "'");
}

void TensorBundle::put(Tensor t) {
  const std::string name = t.name();
  entries_.insert_or_assign(name, std::move(t));
}

const Tensor& TensorBundle::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("no tensor named '" + name + "'");
  return it->second;
}

std::vector<std::string> TensorBundle::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::uint64_t bundle_size_bytes(const TensorBundle& b) {
  std::uint64_t total = 0;
  for (const auto& [_, t] : b.entries()) total += t.byte_size();
  return total;
}

void write_bundle(const TensorBundle& b, std::ostream& out) {
  io::ByteWriter w(out);
  w.bytes(std::string_view(kBundleMagic, 4));
  w.u16(kBundleVersion);
  w.u32(static_cast<std::uint32_t>(b.metadata().size()));
  for (const auto& [k, v] : b.metadata()) {
    w.string(k);
    w.string(v);
  }
  w.u32(static_cast<std::uint32_t>(b.size()));
  for (const auto& [name, t] : b.entries()) {
    w.string(name);
    w.u8(static_cast<std::uint8_t>(t.precision()));
    w.u8(static_cast<std::uint8_t>(t.shape().size()));
    for (auto d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    if (t.precision() == Precision::kSingle) {
      w.f32_array(t.single_values());
    } else {
      w.u16_array(t.half_bits());
    }
  }
  if (!out) throw RuntimeFailure("failed writing tensor bundle");
}

namespace {

// Grows the buffer as bytes arrive so a corrupt header cannot force a huge
// allocation before the truncation is noticed.
template <typename T>
std::vector<T> read_chunked(io::ByteReader& r, std::size_t n) {
  constexpr std::size_t kChunk = std::size_t{1} << 20;
  std::vector<T> out;
  out.reserve(std::min(n, kChunk));
  while (out.size() < n) {
    const std::size_t take = std::min(kChunk, n - out.size());
    const std::size_t offset = out.size();
    out.resize(offset + take);
    if constexpr (std::is_same_v<T, float>) {
      r.f32_array(std::span<float>(out.data() + offset, take));
    } else {
      r.u16_array(std::span<std::uint16_t>(out.data() + offset, take));
    }
  }
  return out;
}

}  // namespace

TensorBundle read_bundle(std::istream& in) {
  io::ByteReader r(in, "tensor bundle");
  char magic[4] = {};
  try {
    const std::string m = r.bytes(4);
    std::memcpy(magic, m.data(), 4);
  } catch (const CorruptionError&) {
    throw FormatError("tensor bundle: missing magic header");
  }
  if (std::memcmp(magic, kBundleMagic, 4) != 0) {
    throw FormatError("tensor bundle: bad magic bytes");
  }
  const auto version = r.u16();
  if (version != kBundleVersion) {
    throw FormatError("tensor bundle: unsupported version " + std::to_string(version));
  }

  TensorBundle b;
  const auto meta_count = r.u32();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = r.string();
    std::string value = r.string();
    if (!b.metadata().emplace(std::move(key), std::move(value)).second) {
      throw ValidationError("tensor bundle: duplicate metadata key");
    }
  }

  const auto tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = r.string();
    const auto precision_tag = r.u8();
    if (precision_tag > 1) {
      throw FormatError("tensor bundle: unknown precision tag " +
                        std::to_string(precision_tag) + " for '" + name + "'");
    }
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) {
      const auto dim = r.u64();
      if (dim == 0 || dim > (1ull << 40)) {
        throw CorruptionError("tensor bundle: implausible dimension for '" + name + "'");
      }
      d = static_cast<std::int64_t>(dim);
    }
    std::size_t n;
    try {
      n = static_cast<std::size_t>(element_count(shape));
    } catch (const ShapeError& e) {
      throw CorruptionError(std::string("tensor bundle: ") + e.what());
    }
    if (b.contains(name)) {
      throw ValidationError("tensor bundle: duplicate tensor name '" + name + "'");
    }
    if (precision_tag == 0) {
      auto values = read_chunked<float>(r, n);
      b.add(Tensor(std::move(name), std::move(shape), std::move(values)));
    } else {
      auto bits = read_chunked<std::uint16_t>(r, n);
      b.add(Tensor(std::move(name), std::move(shape), std::move(bits)));
    }
  }
  return b;
}

void save_bundle(const TensorBundle& b, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  write_bundle(b, out);
}

TensorBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return read_bundle(in);
}

}  // namespace gatedvlad
