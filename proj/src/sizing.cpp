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

#include "gatedvlad/sizing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gatedvlad/errors.hpp"

namespace gatedvlad {

namespace {
constexpr const char* kExpertHiddenWeights = "tower/experts/hidden_weights";
constexpr const char* kExpertHiddenBias = "tower/experts/hidden_biases";
}  // namespace

SizeModelConfig SizeModelConfig::paper_scale(int k, int h) {
  SizeModelConfig cfg;
  cfg.base = ModelConfig::make(k, h, kPaperVocab, kPaperVideoDim, kPaperAudioDim);
  cfg.use_dummy_expert = cfg.base.use_dummy_expert;
  return cfg;
}

SizeModelConfig SizeModelConfig::from_model(const ModelConfig& model) {
  SizeModelConfig cfg;
  cfg.base = model;
  cfg.audio_cluster_ratio =
      static_cast<double>(model.k_audio) / static_cast<double>(model.k_video);
  cfg.use_dummy_expert = model.use_dummy_expert;
  cfg.include_hidden_gate = true;
  cfg.expert_hidden_width = 0;
  return cfg;
}

int SizeModelConfig::audio_clusters() const {
  return std::max(1, static_cast<int>(std::floor(base.k_video * audio_cluster_ratio + 1e-9)));
}

void SizeModelConfig::validate() const {
  base.validate();
  if (!(audio_cluster_ratio > 0.0 && audio_cluster_ratio <= 1.0)) {
    throw ValidationError("size model: audio_cluster_ratio must lie in (0, 1]");
  }
  if (expert_hidden_width < 0) {
    throw ValidationError("size model: expert_hidden_width must be >= 0");
  }
}

std::string SizeModelConfig::describe() const {
  std::ostringstream os;
  os << "dummy_expert=" << (use_dummy_expert ? "on" : "off")
     << " hidden_gate=" << (include_hidden_gate ? "on" : "off")
     << " audio_ratio=" << audio_cluster_ratio
     << " expert_hidden_width=" << expert_hidden_width;
  return os.str();
}

std::uint64_t SizeReport::param_count() const {
  std::uint64_t n = 0;
  for (const auto& t : tensors) n += t.param_count;
  return n;
}

namespace {

void finalize(SizeReport& r) {
  r.total_bytes = 0;
  std::uint64_t big = 0;
  const auto& big4 = names::big_four();
  for (const auto& t : r.tensors) {
    r.total_bytes += t.bytes;
    if (std::find(big4.begin(), big4.end(), t.name) != big4.end()) big += t.bytes;
  }
  r.big4_share = r.total_bytes == 0
                     ? 0.0
                     : static_cast<double>(big) / static_cast<double>(r.total_bytes);
}

}  // namespace

SizeReport enumerate_tensors(const SizeModelConfig& cfg) {
  cfg.validate();
  const ModelConfig& m = cfg.base;
  const std::int64_t k_v = m.k_video, k_a = cfg.audio_clusters();
  const std::int64_t h = m.hidden, h2 = 2 * h, v = m.vocab, experts = m.num_experts;
  const std::int64_t slots = experts + (cfg.use_dummy_expert ? 1 : 0);
  const std::int64_t vlad = k_v * m.d_video + k_a * m.d_audio;

  SizeReport r;
  auto add = [&](const char* name, Shape shape) {
    const auto n = static_cast<std::uint64_t>(element_count(shape));
    r.tensors.push_back({name, std::move(shape), n, n * 4});
  };
  auto add_bias = [&](const char* name, Shape shape) {
    if (cfg.count_biases) add(name, std::move(shape));
  };

  add(names::kVideoAssignWeights, {m.d_video, k_v});
  add_bias(names::kVideoAssignBias, {k_v});
  add(names::kVideoCentroids, {k_v, m.d_video});
  add(names::kAudioAssignWeights, {m.d_audio, k_a});
  add_bias(names::kAudioAssignBias, {k_a});
  add(names::kAudioCentroids, {k_a, m.d_audio});
  add(names::kHidden1Weights, {vlad, h});
  add(names::kBnGamma, {h});
  add(names::kBnBeta, {h});
  if (cfg.count_bn_stats) {
    add(names::kBnMovingMean, {h});
    add(names::kBnMovingVar, {h});
  }
  add(names::kHidden2Weights, {h, h2});
  add_bias(names::kHidden2Bias, {h2});
  if (cfg.include_hidden_gate) {
    add(names::kHiddenGateWeights, {h2, h2});
    add_bias(names::kHiddenGateBias, {h2});
  }
  add(names::kGatesWeights, {h2, v * slots});
  if (cfg.expert_hidden_width == 0) {
    add(names::kExpertsWeights, {h2, v * experts});
  } else {
    const std::int64_t w = cfg.expert_hidden_width;
    add(kExpertHiddenWeights, {h2, experts * w});
    add_bias(kExpertHiddenBias, {experts * w});
    add(names::kExpertsWeights, {w, v * experts});
  }
  add_bias(names::kExpertsBias, {v * experts});
  add(names::kOutputGateWeights, {v, v});
  add_bias(names::kOutputGateBias, {v});
  finalize(r);
  return r;
}

SizeReport size_report(const TensorBundle& bundle) {
  SizeReport r;
  for (const auto& [name, t] : bundle.entries()) {
    r.tensors.push_back({name, t.shape(), t.size(), t.byte_size()});
  }
  finalize(r);
  return r;
}

double CompressionReport::rate() const {
  if (original_bytes == 0) return 0.0;
  return 1.0 - static_cast<double>(compressed_bytes) / static_cast<double>(original_bytes);
}

CompressionSelection CompressionSelection::explicit_names(std::vector<std::string> names) {
  CompressionSelection s;
  s.kind = Kind::kExplicit;
  s.names = std::move(names);
  return s;
}

CompressionSelection CompressionSelection::largest(int count) {
  CompressionSelection s;
  s.kind = Kind::kLargest;
  s.names.clear();
  s.count = count;
  return s;
}

namespace {

std::vector<std::string> resolve_selection(const TensorBundle& weights,
                                           const CompressionSelection& selection) {
  if (selection.kind == CompressionSelection::Kind::kExplicit) {
    std::set<std::string> seen;
    for (const auto& name : selection.names) {
      if (!weights.contains(name)) {
        throw SelectionError("compression selection names unknown tensor '" + name + "'");
      }
      seen.insert(name);
    }
    return {seen.begin(), seen.end()};
  }
  if (selection.count < 0) throw SelectionError("compression selection count must be >= 0");
  std::vector<const Tensor*> all;
  for (const auto& [_, t] : weights.entries()) all.push_back(&t);
  std::stable_sort(all.begin(), all.end(), [](const Tensor* a, const Tensor* b) {
    return a->byte_size() > b->byte_size();
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < all.size() && i < static_cast<std::size_t>(selection.count); ++i) {
    out.push_back(all[i]->name());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

CompressedWeights float16_compress(const TensorBundle& weights,
                                   const CompressionSelection& selection, bool strict) {
  CompressedWeights out{weights, {}};
  out.report.original_bytes = bundle_size_bytes(weights);
  out.report.cast_tensor_names = resolve_selection(weights, selection);
  for (const auto& name : out.report.cast_tensor_names) {
    CastResult cast = cast_precision(weights.at(name), Precision::kHalf);
    out.report.overflow_count += cast.overflow_count;
    out.weights.put(std::move(cast.tensor));
  }
  out.report.compressed_bytes = bundle_size_bytes(out.weights);
  if (strict && out.report.overflow_count > 0) {
    throw ValidationError("float16 compression overflowed " +
                          std::to_string(out.report.overflow_count) + " values to infinity");
  }
  return out;
}

CompressionReport predict_compression(const SizeReport& report,
                                      const std::vector<std::string>& cast_names) {
  CompressionReport out;
  out.original_bytes = report.total_bytes;
  out.compressed_bytes = report.total_bytes;
  for (const auto& name : cast_names) {
    auto it = std::find_if(report.tensors.begin(), report.tensors.end(),
                           [&](const TensorSize& t) { return t.name == name; });
    if (it == report.tensors.end()) {
      throw SelectionError("compression selection names unknown tensor '" + name + "'");
    }
    out.compressed_bytes -= it->bytes / 2;
    out.cast_tensor_names.push_back(name);
  }
  std::sort(out.cast_tensor_names.begin(), out.cast_tensor_names.end());
  return out;
}

SparseScheme SparseScheme::coordinate(int index_bits, int indices_per_nonzero) {
  SparseScheme s;
  s.kind = Kind::kCoordinate;
  s.index_bits = index_bits;
  s.indices_per_nonzero = indices_per_nonzero;
  return s;
}

SparseScheme SparseScheme::bitmask(int bits_per_flag) {
  SparseScheme s;
  s.kind = Kind::kBitmask;
  s.bits_per_flag = bits_per_flag;
  return s;
}

double sparse_compression_rate(std::uint64_t param_count, double sparsity, int value_bits,
                               const SparseScheme& scheme) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    throw ValidationError("sparsity must lie in [0, 1]");
  }
  if (param_count == 0 || value_bits < 1) {
    throw ValidationError("param_count and value_bits must be positive");
  }
  const double n = static_cast<double>(param_count);
  const double kept = (1.0 - sparsity) * n;
  double stored_bits;
  if (scheme.kind == SparseScheme::Kind::kCoordinate) {
    stored_bits = kept * (value_bits + static_cast<double>(scheme.indices_per_nonzero) *
                                           scheme.index_bits);
  } else {
    stored_bits = kept * value_bits + n * scheme.bits_per_flag;
  }
  return 1.0 - stored_bits / (n * value_bits);
}

double quantization_rate(int value_bits_from, int value_bits_to) {
  if (value_bits_to < 1 || value_bits_to >= value_bits_from) {
    throw ValidationError("quantization target width must be in [1, source width)");
  }
  return 1.0 - static_cast<double>(value_bits_to) / static_cast<double>(value_bits_from);
}

std::vector<Table1Row> read_table1_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("table1 csv: empty input");
  std::vector<Table1Row> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError("table1 csv: expected 9 columns: " + line);
    Table1Row r;
    try {
      r.model = cells[0];
      r.code = cells[1];
      r.k = std::stoi(cells[2]);
      r.h = std::stoi(cells[3]);
      r.f32_mb = std::stod(cells[4]);
      r.f16_mb = std::stod(cells[5]);
      r.rate = std::stod(cells[6]);
      r.best_avg_gap = std::stod(cells[7]);
      r.best_single_gap = std::stod(cells[8]);
    } catch (const std::exception&) {
      throw FormatError("table1 csv: malformed row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<Table1Row> load_table1_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return read_table1_csv(in);
}

std::vector<SizeModelConfig> calibration_grid(const SizeModelConfig& base) {
  std::vector<SizeModelConfig> grid;
  for (bool dummy : {true, false}) {
    for (bool gate : {true, false}) {
      for (double ratio : {1.0, 0.5, 0.25}) {
        for (int width : {0, 256, 512, 1024}) {
          SizeModelConfig c = base;
          c.use_dummy_expert = dummy;
          c.base.use_dummy_expert = dummy;
          c.include_hidden_gate = gate;
          c.audio_cluster_ratio = ratio;
          c.expert_hidden_width = width;
          grid.push_back(c);
        }
      }
    }
  }
  return grid;
}

std::vector<CalibrationRow> evaluate_size_model(const std::vector<Table1Row>& table,
                                                const SizeModelConfig& flags) {
  std::vector<CalibrationRow> rows;
  for (const auto& t : table) {
    SizeModelConfig c = flags;
    c.base.k_video = t.k;
    c.base.k_audio = std::max(1, t.k / 2);
    c.base.hidden = t.h;
    const SizeReport report = enumerate_tensors(c);
    const CompressionReport comp = predict_compression(report);
    CalibrationRow r;
    r.k = t.k;
    r.h = t.h;
    r.target_f32_mb = t.f32_mb;
    r.predicted_f32_mb = report.total_mb();
    r.relative_error = std::abs(r.predicted_f32_mb - t.f32_mb) / t.f32_mb;
    r.target_f16_mb = t.f16_mb;
    r.predicted_f16_mb = comp.compressed_mb();
    r.predicted_rate = comp.rate();
    r.big4_share = report.big4_share;
    rows.push_back(r);
  }
  return rows;
}

CalibrationResult calibrate_size_model(const std::vector<Table1Row>& table,
                                       const SizeModelConfig& base) {
  if (table.empty()) throw InputError("calibration: empty table");
  CalibrationResult result;
  bool have_best = false;
  for (const auto& flags : calibration_grid(base)) {
    const auto rows = evaluate_size_model(table, flags);
    double sum = 0.0;
    for (const auto& r : rows) sum += r.relative_error;
    const double mare = sum / static_cast<double>(rows.size());
    result.candidates.push_back({flags, mare});
    if (!have_best || mare < result.mean_abs_relative_error) {
      have_best = true;
      result.best = flags;
      result.mean_abs_relative_error = mare;
      result.rows = rows;
    }
  }
  return result;
}

namespace {

nlohmann::json flags_json(const SizeModelConfig& c) {
  return {
      {"vocab", c.base.vocab},
      {"d_video", c.base.d_video},
      {"d_audio", c.base.d_audio},
      {"num_experts", c.base.num_experts},
      {"use_dummy_expert", c.use_dummy_expert},
      {"include_hidden_gate", c.include_hidden_gate},
      {"audio_cluster_ratio", c.audio_cluster_ratio},
      {"expert_hidden_width", c.expert_hidden_width},
      {"count_biases", c.count_biases},
      {"count_bn_stats", c.count_bn_stats},
  };
}

}  // namespace

std::string size_report_json(const SizeReport& report, const SizeModelConfig* cfg) {
  nlohmann::json j;
  if (cfg) {
    j["config"] = flags_json(*cfg);
    j["config"]["k_video"] = cfg->base.k_video;
    j["config"]["k_audio"] = cfg->audio_clusters();
    j["config"]["hidden"] = cfg->base.hidden;
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : report.tensors) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"params", t.param_count},
                       {"bytes", t.bytes}});
  }
  j["tensors"] = tensors;
  j["total_params"] = report.param_count();
  j["total_bytes"] = report.total_bytes;
  j["total_mb"] = report.total_mb();
  j["big4_share"] = report.big4_share;
  return j.dump(2);
}

std::string calibration_json(const CalibrationResult& result) {
  nlohmann::json j;
  j["best_flags"] = flags_json(result.best);
  j["mean_abs_relative_error"] = result.mean_abs_relative_error;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"k", r.k},
                    {"h", r.h},
                    {"target_f32_mb", r.target_f32_mb},
                    {"predicted_f32_mb", r.predicted_f32_mb},
                    {"relative_error", r.relative_error},
                    {"target_f16_mb", r.target_f16_mb},
                    {"predicted_f16_mb", r.predicted_f16_mb},
                    {"predicted_rate", r.predicted_rate},
                    {"big4_share", r.big4_share}});
  }
  j["rows"] = rows;
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : result.candidates) {
    nlohmann::json cj = flags_json(c.flags);
    cj["mean_abs_relative_error"] = c.mean_abs_relative_error;
    candidates.push_back(cj);
  }
  j["candidates"] = candidates;
  return j.dump(2);
}

}  // namespace gatedvlad
