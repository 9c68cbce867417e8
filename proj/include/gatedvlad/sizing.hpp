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

#ifndef GATEDVLAD_SIZING_HPP_
#define GATEDVLAD_SIZING_HPP_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "gatedvlad/bundle.hpp"
#include "gatedvlad/model.hpp"

namespace gatedvlad {

inline constexpr double kBytesPerMb = 1e6;
inline constexpr int kPaperVocab = 3862;
inline constexpr int kPaperVideoDim = 1024;
inline constexpr int kPaperAudioDim = 128;

// Structural accounting flags on top of a model config. The audio cluster
// count is derived from `audio_cluster_ratio`, not from base.k_audio.
struct SizeModelConfig {
  ModelConfig base;
  double audio_cluster_ratio = 0.5;
  bool use_dummy_expert = true;
  bool include_hidden_gate = true;
  // 0 means plain affine experts; otherwise each expert owns a hidden layer
  // of this width ahead of its per-class output.
  int expert_hidden_width = 0;
  bool count_biases = true;
  bool count_bn_stats = true;

  // V = 3862, 1024-d video, 128-d audio, five experts.
  static SizeModelConfig paper_scale(int k, int h);
  // Flags that reproduce exactly the tensors of model_core's layout.
  static SizeModelConfig from_model(const ModelConfig& cfg);

  int audio_clusters() const;
  void validate() const;
  std::string describe() const;
};

struct TensorSize {
  std::string name;
  Shape shape;
  std::uint64_t param_count = 0;
  std::uint64_t bytes = 0;
};

struct SizeReport {
  std::vector<TensorSize> tensors;  // layout order
  std::uint64_t total_bytes = 0;
  double big4_share = 0.0;  // fraction of bytes in names::big_four()

  double total_mb() const { return static_cast<double>(total_bytes) / kBytesPerMb; }
  std::uint64_t param_count() const;
};

// Single-precision inventory of every tensor implied by `cfg`.
SizeReport enumerate_tensors(const SizeModelConfig& cfg);
// Inventory of an actual bundle at its stored precisions.
SizeReport size_report(const TensorBundle& bundle);

struct CompressionReport {
  std::uint64_t original_bytes = 0;
  std::uint64_t compressed_bytes = 0;
  std::vector<std::string> cast_tensor_names;
  std::size_t overflow_count = 0;

  double original_mb() const { return static_cast<double>(original_bytes) / kBytesPerMb; }
  double compressed_mb() const { return static_cast<double>(compressed_bytes) / kBytesPerMb; }
  // 1 - compressed / original.
  double rate() const;
};

struct CompressionSelection {
  enum class Kind { kExplicit, kLargest };
  Kind kind = Kind::kExplicit;
  std::vector<std::string> names = names::big_four();
  int count = 4;  // used by kLargest

  static CompressionSelection explicit_names(std::vector<std::string> names);
  static CompressionSelection largest(int count = 4);
};

struct CompressedWeights {
  TensorBundle weights;
  CompressionReport report;
};

// Casts the selected tensors to half precision and leaves the rest alone.
// Unknown names throw SelectionError; with `strict`, any overflow to
// infinity throws ValidationError.
CompressedWeights float16_compress(const TensorBundle& weights,
                                   const CompressionSelection& selection = {},
                                   bool strict = false);

// The same accounting applied to an enumerated report, for full-scale
// configurations that are never instantiated.
CompressionReport predict_compression(const SizeReport& report,
                                      const std::vector<std::string>& cast_names =
                                          names::big_four());

struct SparseScheme {
  enum class Kind { kCoordinate, kBitmask };
  Kind kind = Kind::kCoordinate;
  int index_bits = 32;
  int indices_per_nonzero = 2;
  int bits_per_flag = 1;

  static SparseScheme coordinate(int index_bits, int indices_per_nonzero);
  static SparseScheme bitmask(int bits_per_flag);
};

// 1 - stored_bits / dense_bits. Negative when indices cost more than the
// zeros save.
double sparse_compression_rate(std::uint64_t param_count, double sparsity, int value_bits,
                               const SparseScheme& scheme);

// 1 - to / from; codebooks are ignored.
double quantization_rate(int value_bits_from = 32, int value_bits_to = 8);

struct Table1Row {
  std::string model;  // e.g. "K24-H1440"
  std::string code;   // single letter
  int k = 0;
  int h = 0;
  double f32_mb = 0.0;
  double f16_mb = 0.0;
  double rate = 0.0;
  double best_avg_gap = 0.0;
  double best_single_gap = 0.0;
};

std::vector<Table1Row> read_table1_csv(std::istream& in);
std::vector<Table1Row> load_table1_csv(const std::filesystem::path& path);

struct CalibrationRow {
  int k = 0;
  int h = 0;
  double target_f32_mb = 0.0;
  double predicted_f32_mb = 0.0;
  double relative_error = 0.0;  // |pred - target| / target
  double target_f16_mb = 0.0;
  double predicted_f16_mb = 0.0;
  double predicted_rate = 0.0;
  double big4_share = 0.0;
};

struct CalibrationCandidate {
  SizeModelConfig flags;
  double mean_abs_relative_error = 0.0;
};

struct CalibrationResult {
  SizeModelConfig best;
  double mean_abs_relative_error = 0.0;
  std::vector<CalibrationRow> rows;
  std::vector<CalibrationCandidate> candidates;  // enumeration order
};

// Flag grid searched by calibrate_size_model, in tie-break order.
std::vector<SizeModelConfig> calibration_grid(const SizeModelConfig& base);

// Exhaustive search over calibration_grid(base) minimizing the mean absolute
// relative error against the f32 column. Earlier grid entries win ties.
CalibrationResult calibrate_size_model(const std::vector<Table1Row>& table,
                                       const SizeModelConfig& base =
                                           SizeModelConfig::paper_scale(1, 1));

// Per-row predictions for a fixed flag set.
std::vector<CalibrationRow> evaluate_size_model(const std::vector<Table1Row>& table,
                                                const SizeModelConfig& flags);

std::string size_report_json(const SizeReport& report, const SizeModelConfig* cfg = nullptr);
std::string calibration_json(const CalibrationResult& result);

}  // namespace gatedvlad

#endif  // GATEDVLAD_SIZING_HPP_
