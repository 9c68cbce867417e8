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

#ifndef GATEDVLAD_BUNDLE_HPP_
#define GATEDVLAD_BUNDLE_HPP_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "gatedvlad/tensor.hpp"

namespace gatedvlad {

// Named collection of tensors plus string metadata. Iteration is
// lexicographic by name so serialization is deterministic.
class TensorBundle {
 public:
  using Entries = std::map<std::string, Tensor>;
  using Metadata = std::map<std::string, std::string>;

  // Throws ValidationError if a tensor with the same name exists.
  void add(Tensor t);
  // Inserts or replaces.
  void put(Tensor t);

  bool contains(const std::string& name) const { return entries_.contains(name); }
  // Throws ValidationError for unknown names.
  const Tensor& at(const std::string& name) const;

  const Entries& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;

  Metadata& metadata() { return metadata_; }
  const Metadata& metadata() const { return metadata_; }

  friend bool operator==(const TensorBundle&, const TensorBundle&) = default;

 private:
  Entries entries_;
  Metadata metadata_;
};

// Payload bytes only: sum over tensors of element count times element width.
std::uint64_t bundle_size_bytes(const TensorBundle& b);

inline constexpr char kBundleMagic[4] = {'T', 'B', 'N', 'D'};
inline constexpr std::uint16_t kBundleVersion = 1;

// Layout (little-endian): magic "TBND", u16 version, u32 metadata count,
// (u32-len key, u32-len value)*, u32 tensor count, then per tensor u32-len
// UTF-8 name, u8 precision (0 single, 1 half), u8 rank, rank x u64 dims,
// raw payload.
void write_bundle(const TensorBundle& b, std::ostream& out);
TensorBundle read_bundle(std::istream& in);

void save_bundle(const TensorBundle& b, const std::filesystem::path& path);
TensorBundle load_bundle(const std::filesystem::path& path);

}  // namespace gatedvlad

#endif  // GATEDVLAD_BUNDLE_HPP_
