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

#include "gatedvlad/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "gatedvlad/binary_io.hpp"
#include "gatedvlad/errors.hpp"

namespace gatedvlad {

void SyntheticDatasetConfig::validate() const {
  if (num_videos < 1 || vocab < 1 || d_video < 1 || d_audio < 1 || max_frames < 1) {
    throw ValidationError("dataset config: sizes must be positive");
  }
  if (!(mean_labels_per_video >= 1.0) || mean_labels_per_video > vocab) {
    throw ValidationError("dataset config: mean labels must lie in [1, vocab]");
  }
  if (!(noise_sigma >= 0.0)) throw ValidationError("dataset config: noise_sigma must be >= 0");
}

bool operator==(const VideoExample& a, const VideoExample& b) {
  return a.video_id == b.video_id && a.labels == b.labels &&
         a.frames.video.rows() == b.frames.video.rows() &&
         a.frames.video.cols() == b.frames.video.cols() &&
         a.frames.audio.cols() == b.frames.audio.cols() &&
         a.frames.video == b.frames.video && a.frames.audio == b.frames.audio;
}

GroundTruth Dataset::ground_truth() const {
  GroundTruth truth;
  for (const auto& v : videos) truth[v.video_id] = {v.labels.begin(), v.labels.end()};
  return truth;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

FrameMatrix gaussian_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FrameMatrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(normal(rng));
  }
  return m;
}

std::string video_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "vid%06d", index);
  return buf;
}

}  // namespace

Dataset generate(const SyntheticDatasetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 proto_rng(splitmix64(cfg.seed));
  const FrameMatrix video_protos = gaussian_matrix(proto_rng, cfg.vocab, cfg.d_video);
  const FrameMatrix audio_protos = gaussian_matrix(proto_rng, cfg.vocab, cfg.d_audio);

  Dataset data{cfg.vocab, cfg.d_video, cfg.d_audio, {}};
  data.videos.reserve(cfg.num_videos);
  const int min_frames = std::max(1, cfg.max_frames / 2);
  for (int i = 0; i < cfg.num_videos; ++i) {
    std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1)));

    int count = 1;
    if (cfg.mean_labels_per_video > 1.0) {
      std::poisson_distribution<int> extra(cfg.mean_labels_per_video - 1.0);
      count += extra(rng);
    }
    count = std::min(count, cfg.vocab);
    std::vector<int> pool(cfg.vocab);
    std::iota(pool.begin(), pool.end(), 0);
    for (int j = 0; j < count; ++j) {
      std::uniform_int_distribution<int> pick(j, cfg.vocab - 1);
      std::swap(pool[j], pool[pick(rng)]);
    }
    std::vector<int> labels(pool.begin(), pool.begin() + count);
    std::sort(labels.begin(), labels.end());

    std::uniform_int_distribution<int> frames_dist(min_frames, cfg.max_frames);
    const int n = frames_dist(rng);

    Eigen::RowVectorXf video_mean = Eigen::RowVectorXf::Zero(cfg.d_video);
    Eigen::RowVectorXf audio_mean = Eigen::RowVectorXf::Zero(cfg.d_audio);
    for (int l : labels) {
      video_mean += video_protos.row(l);
      audio_mean += audio_protos.row(l);
    }
    video_mean /= static_cast<float>(count);
    audio_mean /= static_cast<float>(count);

    VideoExample ex;
    ex.video_id = video_name(i);
    ex.labels = std::move(labels);
    ex.frames.video = video_mean.replicate(n, 1);
    ex.frames.audio = audio_mean.replicate(n, 1);
    if (cfg.noise_sigma > 0.0) {
      const float sigma = static_cast<float>(cfg.noise_sigma);
      ex.frames.video += sigma * gaussian_matrix(rng, n, cfg.d_video);
      ex.frames.audio += sigma * gaussian_matrix(rng, n, cfg.d_audio);
    }
    data.videos.push_back(std::move(ex));
  }
  return data;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double validate_fraction,
                                  std::uint64_t seed) {
  if (!(validate_fraction > 0.0 && validate_fraction < 1.0)) {
    throw ValidationError("split: fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = data.videos.size();
  const auto n_validate =
      static_cast<std::size_t>(std::llround(validate_fraction * static_cast<double>(n)));
  if (n_validate == 0 || n_validate == n) {
    throw ValidationError("split: fraction " + std::to_string(validate_fraction) +
                          " leaves one side empty for " + std::to_string(n) + " videos");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> to_validate(n, 0);
  for (std::size_t i = 0; i < n_validate; ++i) to_validate[order[i]] = 1;

  Dataset train{data.vocab, data.d_video, data.d_audio, {}};
  Dataset validate{data.vocab, data.d_video, data.d_audio, {}};
  for (std::size_t i = 0; i < n; ++i) {
    (to_validate[i] ? validate : train).videos.push_back(data.videos[i]);
  }
  return {std::move(train), std::move(validate)};
}

std::uint64_t record_payload_bytes(const VideoExample& v) {
  const auto n = static_cast<std::uint64_t>(v.frames.frames());
  const auto dims = static_cast<std::uint64_t>(v.frames.video.cols() + v.frames.audio.cols());
  return 4 + v.video_id.size() + 4 + 4 * n * dims + 4 + 4 * v.labels.size();
}

void write_dataset(const Dataset& data, std::ostream& out) {
  io::ByteWriter w(out);
  w.bytes(std::string_view(kDatasetMagic, 4));
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.vocab));
  w.u32(static_cast<std::uint32_t>(data.d_video));
  w.u32(static_cast<std::uint32_t>(data.d_audio));
  w.u64(data.videos.size());
  for (const auto& v : data.videos) {
    if (v.frames.video.cols() != data.d_video || v.frames.audio.cols() != data.d_audio ||
        v.frames.audio.rows() != v.frames.video.rows()) {
      throw ShapeError("dataset: video '" + v.video_id + "' has inconsistent frame shapes");
    }
    w.u32(static_cast<std::uint32_t>(record_payload_bytes(v)));
    w.string(v.video_id);
    w.u32(static_cast<std::uint32_t>(v.frames.frames()));
    w.f32_array({v.frames.video.data(), static_cast<std::size_t>(v.frames.video.size())});
    w.f32_array({v.frames.audio.data(), static_cast<std::size_t>(v.frames.audio.size())});
    w.u32(static_cast<std::uint32_t>(v.labels.size()));
    for (int l : v.labels) w.u32(static_cast<std::uint32_t>(l));
  }
  if (!out) throw RuntimeFailure("failed writing dataset");
}

Dataset read_dataset(std::istream& in) {
  io::ByteReader r(in, "dataset");
  std::string magic;
  try {
    magic = r.bytes(4);
  } catch (const CorruptionError&) {
    throw FormatError("dataset: missing magic header");
  }
  if (std::memcmp(magic.data(), kDatasetMagic, 4) != 0) {
    throw FormatError("dataset: bad magic bytes");
  }
  const auto version = r.u16();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  Dataset data;
  data.vocab = static_cast<int>(r.u32());
  data.d_video = static_cast<int>(r.u32());
  data.d_audio = static_cast<int>(r.u32());
  if (data.vocab < 1 || data.d_video < 1 || data.d_audio < 1) {
    throw FormatError("dataset: non-positive header dimensions");
  }
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto declared = r.u32();
    VideoExample v;
    v.video_id = r.string(1u << 16);
    const auto n = r.u32();
    if (n == 0 || n > (1u << 20)) throw CorruptionError("dataset: implausible frame count");
    v.frames.video.resize(n, data.d_video);
    v.frames.audio.resize(n, data.d_audio);
    r.f32_array({v.frames.video.data(), static_cast<std::size_t>(v.frames.video.size())});
    r.f32_array({v.frames.audio.data(), static_cast<std::size_t>(v.frames.audio.size())});
    const auto label_count = r.u32();
    if (label_count > static_cast<std::uint32_t>(data.vocab)) {
      throw CorruptionError("dataset: label count exceeds vocabulary");
    }
    for (std::uint32_t j = 0; j < label_count; ++j) {
      const auto l = r.u32();
      if (l >= static_cast<std::uint32_t>(data.vocab)) {
        throw ValidationError("dataset: label out of range in '" + v.video_id + "'");
      }
      v.labels.push_back(static_cast<int>(l));
    }
    if (record_payload_bytes(v) != declared) {
      throw CorruptionError("dataset: record length mismatch for '" + v.video_id + "'");
    }
    data.videos.push_back(std::move(v));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  write_dataset(data, out);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return read_dataset(in);
}

}  // namespace gatedvlad
