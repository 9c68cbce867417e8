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

#ifndef GATEDVLAD_DATAGEN_HPP_
#define GATEDVLAD_DATAGEN_HPP_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "gatedvlad/metrics.hpp"
#include "gatedvlad/model.hpp"

namespace gatedvlad {

struct SyntheticDatasetConfig {
  int num_videos = 1000;
  int vocab = 25;
  int d_video = 16;
  int d_audio = 4;
  int max_frames = 30;
  double mean_labels_per_video = 3.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct VideoExample {
  std::string video_id;
  FrameFeatures frames;
  std::vector<int> labels;  // sorted, unique

  friend bool operator==(const VideoExample& a, const VideoExample& b);
};

struct Dataset {
  int vocab = 0;
  int d_video = 0;
  int d_audio = 0;
  std::vector<VideoExample> videos;

  GroundTruth ground_truth() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Planted-prototype corpus: each class owns a random video and audio
// prototype; every frame of a video is the mean of its labels' prototypes
// plus isotropic Gaussian noise. Label counts are 1 + Poisson(mean - 1),
// capped at the vocabulary size, and frame counts are uniform in
// [max_frames / 2, max_frames].
Dataset generate(const SyntheticDatasetConfig& cfg);

// Seeded disjoint partition. The validate side receives
// round(fraction * n) videos; both sides keep the input order.
std::pair<Dataset, Dataset> split(const Dataset& data, double validate_fraction,
                                  std::uint64_t seed);

inline constexpr char kDatasetMagic[4] = {'V', 'D', 'S', 'F'};
inline constexpr std::uint16_t kDatasetVersion = 1;

// Byte count of one record after its u32 length prefix.
std::uint64_t record_payload_bytes(const VideoExample& v);

void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace gatedvlad

#endif  // GATEDVLAD_DATAGEN_HPP_
