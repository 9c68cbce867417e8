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


#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gatedvlad/bundle.hpp"
#include "gatedvlad/datagen.hpp"
#include "gatedvlad/ensemble.hpp"
#include "gatedvlad/errors.hpp"
#include "gatedvlad/metrics.hpp"
#include "gatedvlad/sizing.hpp"
#include "gatedvlad/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gatedvlad;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

// Data errors that do not come from the library (missing files and the like).
class CliError : public Error {
 public:
  using Error::Error;
};

void summary(const std::string& command, json fields) {
  json line = {{"command", command}, {"status", "ok"}};
  line.update(fields);
  std::cout << line.dump() << "\n";
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw CliError("no such file: " + p.string());
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

Checkpoint load_checkpoint(const fs::path& p) {
  require_file(p);
  return Checkpoint::from_bundle(load_bundle(p));
}

Dataset load_data(const fs::path& p) {
  require_file(p);
  return load_dataset(p);
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CliError("cannot write " + p.string());
  out << text;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

void print_size_table(const SizeReport& report) {
  std::size_t width = 6;
  for (const auto& t : report.tensors) width = std::max(width, t.name.size());
  std::printf("%-*s  %-16s %14s %14s %12s\n", static_cast<int>(width), "tensor", "shape", "params",
              "bytes", "MB");
  for (const auto& t : report.tensors) {
    std::printf("%-*s  %-16s %14llu %14llu %12.6f\n", static_cast<int>(width), t.name.c_str(),
                shape_to_string(t.shape).c_str(), static_cast<unsigned long long>(t.param_count),
                static_cast<unsigned long long>(t.bytes), static_cast<double>(t.bytes) / kBytesPerMb);
  }
  std::printf("%-*s  %-16s %14llu %14llu %12.6f\n", static_cast<int>(width), "total", "",
              static_cast<unsigned long long>(report.param_count()),
              static_cast<unsigned long long>(report.total_bytes), report.total_mb());
  std::printf("big-4 share %.4f\n", report.big4_share);
}

SizeModelConfig flags_from_calibration(const fs::path& path, int k, int h) {
  require_file(path);
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("calibration report: " + std::string(e.what()));
  }
  const json& f = j.at("best_flags");
  SizeModelConfig cfg = SizeModelConfig::paper_scale(k, h);
  cfg.base.vocab = f.at("vocab");
  cfg.base.d_video = f.at("d_video");
  cfg.base.d_audio = f.at("d_audio");
  cfg.base.num_experts = f.at("num_experts");
  cfg.use_dummy_expert = f.at("use_dummy_expert");
  cfg.base.use_dummy_expert = cfg.use_dummy_expert;
  cfg.include_hidden_gate = f.at("include_hidden_gate");
  cfg.audio_cluster_ratio = f.at("audio_cluster_ratio");
  cfg.expert_hidden_width = f.at("expert_hidden_width");
  cfg.count_biases = f.at("count_biases");
  cfg.count_bn_stats = f.at("count_bn_stats");
  return cfg;
}

std::vector<PredictionRecord> ensemble_records(const EnsembleModel& model, const Dataset& data,
                                               int k) {
  std::vector<PredictionRecord> records;
  for (const auto& v : data.videos) {
    const VectorD p = ensemble_predict(model, v.frames);
    const auto top =
        top_k_predictions({p.data(), static_cast<std::size_t>(p.size())}, v.video_id, k);
    records.insert(records.end(), top.begin(), top.end());
  }
  return records;
}

void write_csv(const fs::path& p, const std::vector<PredictionRecord>& records) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CliError("cannot write " + p.string());
  write_predictions_csv(records, out);
}

json members_json(const EnsembleModel& model) {
  json members = json::array();
  for (const auto& m : model.members()) {
    members.push_back({{"source", m.source},
                       {"coefficient", m.coefficient},
                       {"bytes", m.size.total_bytes}});
  }
  return members;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated NetVLAD training, evaluation, compression and ensembling"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for evaluation and prediction")
      ->check(CLI::PositiveNumber);

  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a planted-prototype synthetic dataset");
  SyntheticDatasetConfig gen_cfg;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output dataset file")->required();
  gen->add_option("--videos", gen_cfg.num_videos, "Number of videos")->capture_default_str();
  gen->add_option("--vocab", gen_cfg.vocab, "Label vocabulary size")->capture_default_str();
  gen->add_option("--d-video", gen_cfg.d_video, "Video feature width")->capture_default_str();
  gen->add_option("--d-audio", gen_cfg.d_audio, "Audio feature width")->capture_default_str();
  gen->add_option("--max-frames", gen_cfg.max_frames, "Maximum frames per video")
      ->capture_default_str();
  gen->add_option("--mean-labels", gen_cfg.mean_labels_per_video, "Mean labels per video")
      ->capture_default_str();
  gen->add_option("--noise", gen_cfg.noise_sigma, "Frame noise standard deviation")
      ->capture_default_str();
  gen->add_option("--seed", gen_cfg.seed, "Random seed")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      const Dataset d = generate(gen_cfg);
      ensure_parent(gen_out);
      save_dataset(d, gen_out);
      summary("gen-data", {{"out", gen_out},
                           {"videos", d.videos.size()},
                           {"bytes", fs::file_size(gen_out)}});
    };
  });

  // split
  auto* split_cmd = app.add_subcommand("split", "Split a dataset into train and validate parts");
  std::string split_in, split_train, split_validate;
  double split_fraction = 0.2;
  std::uint64_t split_seed = 1;
  split_cmd->add_option("--in", split_in, "Input dataset")->required();
  split_cmd->add_option("--train-out", split_train, "Train output")->required();
  split_cmd->add_option("--validate-out", split_validate, "Validate output")->required();
  split_cmd->add_option("--validate-fraction", split_fraction, "Fraction sent to validate")
      ->capture_default_str();
  split_cmd->add_option("--seed", split_seed, "Random seed")->capture_default_str();
  split_cmd->callback([&] {
    action = [&] {
      const auto [train_part, validate_part] = split(load_data(split_in), split_fraction, split_seed);
      ensure_parent(split_train);
      ensure_parent(split_validate);
      save_dataset(train_part, split_train);
      save_dataset(validate_part, split_validate);
      summary("split", {{"train", train_part.videos.size()},
                        {"validate", validate_part.videos.size()}});
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model and write a run directory");
  std::string train_data, train_out;
  int train_k = 8, train_h = 32, train_experts = 5;
  std::optional<int> train_k_audio;
  bool train_no_dummy = false, train_no_normalize = false;
  std::string train_optimizer = "adam";
  TrainConfig tc;
  train_cmd->add_option("--data", train_data, "Training dataset")->required();
  train_cmd->add_option("--out-dir", train_out, "Run directory")->required();
  train_cmd->add_option("--k", train_k, "Video clusters")->capture_default_str();
  train_cmd->add_option("--k-audio", train_k_audio, "Audio clusters (default max(1, k/2))");
  train_cmd->add_option("--hidden", train_h, "Hidden size")->capture_default_str();
  train_cmd->add_option("--experts", train_experts, "Mixture experts")->capture_default_str();
  train_cmd->add_flag("--no-dummy-expert", train_no_dummy, "Drop the dummy gate slot");
  train_cmd->add_flag("--no-vlad-normalization", train_no_normalize,
                      "Skip intra and global VLAD normalization");
  train_cmd->add_option("--steps", tc.total_steps, "Training steps")->capture_default_str();
  train_cmd->add_option("--checkpoint-interval", tc.checkpoint_interval, "Steps between checkpoints")
      ->capture_default_str();
  train_cmd->add_option("--learning-rate", tc.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size, "Batch size")->capture_default_str();
  train_cmd->add_option("--optimizer", train_optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  train_cmd->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
  train_cmd->callback([&] {
    action = [&] {
      const Dataset data = load_data(train_data);
      ModelConfig cfg = ModelConfig::make(train_k, train_h, data.vocab, data.d_video, data.d_audio);
      if (train_k_audio) cfg.k_audio = *train_k_audio;
      cfg.num_experts = train_experts;
      cfg.use_dummy_expert = !train_no_dummy;
      cfg.normalize_vlad = !train_no_normalize;
      tc.optimizer = train_optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
      const TrainResult result = train(cfg, tc, data);
      write_run_directory(train_out, cfg, tc, result);
      summary("train", {{"out_dir", train_out},
                        {"config_hash", cfg.hash()},
                        {"steps", tc.total_steps},
                        {"checkpoints", result.checkpoints.size()},
                        {"final_loss", result.loss_curve.empty() ? 0.0
                                                                 : result.loss_curve.back().second}});
    };
  });

  // average-checkpoints
  auto* avg_cmd = app.add_subcommand("average-checkpoints", "Elementwise mean of checkpoints");
  std::vector<std::string> avg_inputs;
  std::string avg_run_dir, avg_out;
  std::int64_t avg_from = 0;
  avg_cmd->add_option("--checkpoints", avg_inputs, "Checkpoint files");
  avg_cmd->add_option("--run-dir", avg_run_dir, "Average every ckpt-*.tb in a run directory");
  avg_cmd->add_option("--from-step", avg_from, "With --run-dir, skip earlier checkpoints")
      ->capture_default_str();
  avg_cmd->add_option("--out", avg_out, "Output checkpoint")->required();
  avg_cmd->callback([&] {
    action = [&] {
      std::vector<fs::path> paths(avg_inputs.begin(), avg_inputs.end());
      if (!avg_run_dir.empty()) {
        if (!fs::is_directory(avg_run_dir)) throw CliError("no such directory: " + avg_run_dir);
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(avg_run_dir)) {
          const std::string name = e.path().filename().string();
          if (name.rfind("ckpt-", 0) == 0 && e.path().extension() == ".tb") found.push_back(e.path());
        }
        std::sort(found.begin(), found.end());
        paths.insert(paths.end(), found.begin(), found.end());
      }
      std::vector<Checkpoint> checkpoints;
      for (const auto& p : paths) {
        Checkpoint c = load_checkpoint(p);
        if (c.step >= avg_from) checkpoints.push_back(std::move(c));
      }
      if (checkpoints.empty()) throw InputError("average-checkpoints: nothing to average");
      const Checkpoint avg = average_checkpoints(checkpoints);
      ensure_parent(avg_out);
      save_bundle(avg.to_bundle(), avg_out);
      summary("average-checkpoints",
              {{"out", avg_out}, {"averaged", checkpoints.size()}, {"step", avg.step}});
    };
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "GAP@k of one checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_predictions;
  int eval_k = kDefaultTopK;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset")->required();
  eval_cmd->add_option("--top-k", eval_k, "Predictions kept per video")->capture_default_str();
  eval_cmd->add_option("--predictions", eval_predictions, "Also write the prediction CSV");
  eval_cmd->callback([&] {
    action = [&] {
      const Checkpoint c = load_checkpoint(eval_ckpt);
      const Dataset data = load_data(eval_data);
      const GatedNetVlad model(c.config, c.weights);
      const auto records = predict_dataset(model, data, eval_k, threads);
      if (!eval_predictions.empty()) write_csv(eval_predictions, records);
      const GapResult g = gap_at_k(records, data.ground_truth());
      std::printf("GAP@%d %.6f over %zu videos\n", eval_k, g.gap, data.videos.size());
      summary("eval", {{"gap", g.gap},
                       {"k", eval_k},
                       {"videos", data.videos.size()},
                       {"records", g.pooled_count},
                       {"positives", g.total_positives}});
    };
  });

  // compress
  auto* compress_cmd = app.add_subcommand("compress", "Cast selected tensors to half precision");
  std::string compress_in, compress_out;
  std::vector<std::string> compress_names;
  std::optional<int> compress_largest;
  bool compress_strict = false;
  compress_cmd->add_option("--checkpoint", compress_in, "Input checkpoint")->required();
  compress_cmd->add_option("--out", compress_out, "Output bundle")->required();
  auto* names_opt =
      compress_cmd->add_option("--tensors", compress_names, "Tensor names (default: the big four)");
  compress_cmd->add_option("--largest", compress_largest, "Cast the N largest tensors instead")
      ->excludes(names_opt);
  compress_cmd->add_flag("--strict", compress_strict, "Fail when a value overflows to infinity");
  compress_cmd->callback([&] {
    action = [&] {
      require_file(compress_in);
      const TensorBundle in = load_bundle(compress_in);
      CompressionSelection sel;
      if (compress_largest) {
        sel = CompressionSelection::largest(*compress_largest);
      } else if (!compress_names.empty()) {
        sel = CompressionSelection::explicit_names(compress_names);
      }
      CompressedWeights out = float16_compress(in, sel, compress_strict);
      out.weights.metadata() = in.metadata();
      ensure_parent(compress_out);
      save_bundle(out.weights, compress_out);
      const CompressionReport& r = out.report;
      std::printf("%.6f MB -> %.6f MB, rate %.4f, %zu overflowed\n", r.original_mb(),
                  r.compressed_mb(), r.rate(), r.overflow_count);
      summary("compress", {{"out", compress_out},
                           {"original_bytes", r.original_bytes},
                           {"compressed_bytes", r.compressed_bytes},
                           {"rate", r.rate()},
                           {"cast", r.cast_tensor_names},
                           {"overflow_count", r.overflow_count}});
    };
  });

  // size-report
  auto* size_cmd = app.add_subcommand("size-report", "Per-tensor parameter and byte counts");
  std::string size_ckpt, size_calibration = "data/calibration_report.json", size_table1,
                         size_json;
  std::optional<int> size_k, size_h;
  bool size_full_scale = false;
  int size_vocab = 25, size_dv = 16, size_da = 4;
  size_cmd->set_help_flag("--help", "Print this help message and exit");
  size_cmd->add_option("--checkpoint", size_ckpt, "Measure an existing bundle");
  size_cmd->add_option("--k", size_k, "Video clusters");
  size_cmd->add_option("--h", size_h, "Hidden size");
  size_cmd->add_flag("--paper-scale", size_full_scale,
                     "Full-scale dimensions with the calibrated accounting flags");
  size_cmd->add_option("--calibration", size_calibration, "Calibration report for --paper-scale")
      ->capture_default_str();
  size_cmd->add_option("--table1", size_table1, "Reference sizes to compare against");
  size_cmd->add_option("--vocab", size_vocab, "Vocabulary without --paper-scale")
      ->capture_default_str();
  size_cmd->add_option("--d-video", size_dv, "Video width without --paper-scale")
      ->capture_default_str();
  size_cmd->add_option("--d-audio", size_da, "Audio width without --paper-scale")
      ->capture_default_str();
  size_cmd->add_option("--json-out", size_json, "Write the JSON report here");
  size_cmd->callback([&] {
    action = [&] {
      SizeReport report;
      std::optional<SizeModelConfig> flags;
      json extra = json::object();
      if (!size_ckpt.empty()) {
        require_file(size_ckpt);
        report = size_report(load_bundle(size_ckpt));
      } else {
        if (!size_k || !size_h) throw ValidationError("size-report: --k and --h are required");
        if (size_full_scale) {
          flags = flags_from_calibration(size_calibration, *size_k, *size_h);
        } else {
          flags = SizeModelConfig::from_model(
              ModelConfig::make(*size_k, *size_h, size_vocab, size_dv, size_da));
        }
        report = enumerate_tensors(*flags);
      }
      print_size_table(report);
      if (!size_table1.empty() && size_k && size_h) {
        require_file(size_table1);
        for (const auto& row : load_table1_csv(size_table1)) {
          if (row.k != *size_k || row.h != *size_h) continue;
          const double err = std::abs(report.total_mb() - row.f32_mb) / row.f32_mb;
          std::printf("reference %s (%s): %.2f MB, estimate off by %s%%\n", row.model.c_str(),
                      row.code.c_str(), row.f32_mb, fixed(100.0 * err, 2).c_str());
          extra = {{"reference_mb", row.f32_mb}, {"relative_error", err}};
        }
      }
      const std::string text = size_report_json(report, flags ? &*flags : nullptr);
      if (!size_json.empty()) write_text(size_json, text + "\n");
      json fields = {{"total_bytes", report.total_bytes},
                     {"total_mb", report.total_mb()},
                     {"params", report.param_count()},
                     {"big4_share", report.big4_share}};
      fields.update(extra);
      summary("size-report", fields);
    };
  });

  // calibrate-sizes
  auto* calib_cmd = app.add_subcommand("calibrate-sizes", "Fit accounting flags to reference sizes");
  std::string calib_table = "data/table1.csv", calib_out;
  calib_cmd->add_option("--table1", calib_table, "Reference size CSV")->capture_default_str();
  calib_cmd->add_option("--out", calib_out, "Write the calibration report here");
  calib_cmd->callback([&] {
    action = [&] {
      require_file(calib_table);
      const CalibrationResult r = calibrate_size_model(load_table1_csv(calib_table));
      std::printf("best flags: %s\n", r.best.describe().c_str());
      std::printf("%5s %6s %12s %12s %8s %10s %7s %7s\n", "K", "H", "target MB", "pred MB",
                  "error", "pred f16", "rate", "share");
      for (const auto& row : r.rows) {
        std::printf("%5d %6d %12.2f %12.2f %7.2f%% %10.2f %6.2f%% %7.4f\n", row.k, row.h,
                    row.target_f32_mb, row.predicted_f32_mb, 100.0 * row.relative_error,
                    row.predicted_f16_mb, 100.0 * row.predicted_rate, row.big4_share);
      }
      std::printf("mean absolute relative error %.4f%%\n", 100.0 * r.mean_abs_relative_error);
      if (!calib_out.empty()) write_text(calib_out, calibration_json(r) + "\n");
      summary("calibrate-sizes", {{"mean_abs_relative_error", r.mean_abs_relative_error},
                                  {"best_flags", r.best.describe()},
                                  {"rows", r.rows.size()}});
    };
  });

  // analyze-sparsity
  auto* sparse_cmd = app.add_subcommand("analyze-sparsity", "Storage rate of a sparse encoding");
  std::uint64_t sparse_params = 0;
  double sparse_sparsity = 0.0;
  int sparse_bits = 32, sparse_index_bits = 32, sparse_indices = 2, sparse_flag_bits = 1;
  std::string sparse_scheme = "coordinate";
  sparse_cmd->add_option("--params", sparse_params, "Dense parameter count")->required();
  sparse_cmd->add_option("--sparsity", sparse_sparsity, "Fraction of zero parameters")->required();
  sparse_cmd->add_option("--value-bits", sparse_bits, "Bits per stored value")->capture_default_str();
  sparse_cmd->add_option("--scheme", sparse_scheme, "coordinate or bitmask")
      ->check(CLI::IsMember({"coordinate", "bitmask"}))
      ->capture_default_str();
  sparse_cmd->add_option("--index-bits", sparse_index_bits, "Bits per coordinate index")
      ->capture_default_str();
  sparse_cmd->add_option("--indices", sparse_indices, "Indices per nonzero")->capture_default_str();
  sparse_cmd->add_option("--flag-bits", sparse_flag_bits, "Bitmask bits per parameter")
      ->capture_default_str();
  sparse_cmd->callback([&] {
    action = [&] {
      const SparseScheme scheme = sparse_scheme == "bitmask"
                                      ? SparseScheme::bitmask(sparse_flag_bits)
                                      : SparseScheme::coordinate(sparse_index_bits, sparse_indices);
      const double rate =
          sparse_compression_rate(sparse_params, sparse_sparsity, sparse_bits, scheme);
      std::printf("compression rate %.6f\n", rate);
      summary("analyze-sparsity", {{"rate", rate}, {"scheme", sparse_scheme}});
    };
  });

  // analyze-quantization
  auto* quant_cmd = app.add_subcommand("analyze-quantization", "Storage rate of value quantization");
  int quant_from = 32, quant_to = 8;
  quant_cmd->add_option("--from-bits", quant_from, "Original bits per value")->capture_default_str();
  quant_cmd->add_option("--to-bits", quant_to, "Quantized bits per value")->capture_default_str();
  quant_cmd->callback([&] {
    action = [&] {
      const double rate = quantization_rate(quant_from, quant_to);
      std::printf("compression rate %.6f\n", rate);
      summary("analyze-quantization", {{"rate", rate}});
    };
  });

  // build-ensemble
  auto* build_cmd = app.add_subcommand("build-ensemble", "Combine checkpoints into a manifest");
  std::vector<std::string> build_members;
  std::vector<double> build_coeffs;
  std::uint64_t build_budget = kDefaultBudgetBytes;
  bool build_unnormalized = false;
  std::string build_out;
  build_cmd->add_option("--members", build_members, "Single-precision checkpoints")->required();
  build_cmd->add_option("--coefficients", build_coeffs, "Blend weights (default: uniform)");
  build_cmd->add_option("--budget-bytes", build_budget, "Size budget")->capture_default_str();
  build_cmd->add_flag("--allow-unnormalized", build_unnormalized,
                      "Accept coefficients that do not sum to 1");
  build_cmd->add_option("--out", build_out, "Manifest path")->required();
  build_cmd->callback([&] {
    action = [&] {
      std::vector<double> coeffs = build_coeffs;
      if (coeffs.empty()) {
        coeffs.assign(build_members.size(), 1.0 / static_cast<double>(build_members.size()));
      }
      if (coeffs.size() != build_members.size()) {
        throw ValidationError("build-ensemble: one coefficient per member required");
      }
      EnsembleSpec spec;
      spec.budget_bytes = build_budget;
      spec.allow_unnormalized = build_unnormalized;
      for (std::size_t i = 0; i < build_members.size(); ++i) {
        require_file(build_members[i]);
        spec.members.push_back({fs::absolute(build_members[i]), coeffs[i], std::nullopt});
      }
      const EnsembleModel model = build_ensemble(spec);
      ensure_parent(build_out);
      write_manifest(model, build_out);
      const BudgetVerdict v = budget_check(model);
      summary("build-ensemble", {{"out", build_out},
                                 {"members", members_json(model)},
                                 {"total_bytes", model.total_bytes()},
                                 {"within_budget", v.pass},
                                 {"headroom_bytes", v.headroom_bytes}});
    };
  });

  // tune-ensemble
  auto* tune_cmd = app.add_subcommand("tune-ensemble", "Grid-search blend weights on validate data");
  std::string tune_manifest, tune_data, tune_out;
  double tune_step = 0.05;
  int tune_k = kDefaultTopK;
  tune_cmd->add_option("--manifest", tune_manifest, "Ensemble manifest")->required();
  tune_cmd->add_option("--data", tune_data, "Validate dataset")->required();
  tune_cmd->add_option("--grid-step", tune_step, "Lattice spacing")->capture_default_str();
  tune_cmd->add_option("--top-k", tune_k, "Predictions kept per video")->capture_default_str();
  tune_cmd->add_option("--out", tune_out, "Tuned manifest (default: overwrite)");
  tune_cmd->callback([&] {
    action = [&] {
      require_file(tune_manifest);
      EnsembleModel model = build_ensemble(read_manifest(tune_manifest));
      const TuneResult r = tune_coefficients(model, load_data(tune_data), tune_step, tune_k);
      model.set_coefficients(r.coefficients);
      const std::string out = tune_out.empty() ? tune_manifest : tune_out;
      ensure_parent(out);
      write_manifest(model, out);
      summary("tune-ensemble", {{"out", out},
                                {"coefficients", r.coefficients},
                                {"gap", r.gap.gap},
                                {"lattice_points", r.lattice_points}});
    };
  });

  // budget-check
  auto* budget_cmd = app.add_subcommand("budget-check", "Check an ensemble against the size budget");
  std::string budget_manifest;
  std::vector<double> budget_sizes;
  std::uint64_t budget_bytes = kDefaultBudgetBytes;
  auto* manifest_opt = budget_cmd->add_option("--manifest", budget_manifest, "Ensemble manifest");
  budget_cmd->add_option("--sizes-mb", budget_sizes, "Member sizes in MB (1 MB = 10^6 bytes)")
      ->excludes(manifest_opt);
  budget_cmd->add_option("--budget-bytes", budget_bytes, "Budget for --sizes-mb")
      ->capture_default_str();
  budget_cmd->callback([&] {
    action = [&] {
      std::uint64_t total = 0, budget = budget_bytes;
      if (!budget_manifest.empty()) {
        require_file(budget_manifest);
        const EnsembleModel model = build_ensemble(read_manifest(budget_manifest));
        total = model.total_bytes();
        budget = model.budget_bytes();
      } else if (!budget_sizes.empty()) {
        for (double mb : budget_sizes) {
          if (mb < 0) throw ValidationError("budget-check: negative size");
          total += static_cast<std::uint64_t>(std::llround(mb * kBytesPerMb));
        }
      } else {
        throw ValidationError("budget-check: --manifest or --sizes-mb is required");
      }
      const BudgetVerdict v = budget_check(total, budget);
      std::printf("%s: %.2f MB of %.2f MB, headroom %lld bytes\n", v.pass ? "within budget" : "over budget",
                  static_cast<double>(total) / kBytesPerMb, static_cast<double>(budget) / kBytesPerMb,
                  static_cast<long long>(v.headroom_bytes));
      json line = {{"command", "budget-check"},
                   {"status", v.pass ? "ok" : "over_budget"},
                   {"total_bytes", total},
                   {"budget_bytes", budget},
                   {"headroom_bytes", v.headroom_bytes}};
      std::cout << line.dump() << "\n";
      if (!v.pass) throw ValidationError("");
    };
  });

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Write top-k predictions for a dataset");
  std::string predict_manifest, predict_ckpt, predict_data, predict_out;
  int predict_k = kDefaultTopK;
  auto* pm = predict_cmd->add_option("--manifest", predict_manifest, "Ensemble manifest");
  predict_cmd->add_option("--checkpoint", predict_ckpt, "Single checkpoint")->excludes(pm);
  predict_cmd->add_option("--data", predict_data, "Dataset")->required();
  predict_cmd->add_option("--top-k", predict_k, "Predictions kept per video")->capture_default_str();
  predict_cmd->add_option("--out", predict_out, "Prediction CSV")->required();
  predict_cmd->callback([&] {
    action = [&] {
      const Dataset data = load_data(predict_data);
      std::vector<PredictionRecord> records;
      if (!predict_manifest.empty()) {
        require_file(predict_manifest);
        records = ensemble_records(build_ensemble(read_manifest(predict_manifest)), data, predict_k);
      } else if (!predict_ckpt.empty()) {
        const Checkpoint c = load_checkpoint(predict_ckpt);
        records = predict_dataset(GatedNetVlad(c.config, c.weights), data, predict_k, threads);
      } else {
        throw ValidationError("predict: --manifest or --checkpoint is required");
      }
      write_csv(predict_out, records);
      const GapResult g = gap_at_k(records, data.ground_truth());
      summary("predict", {{"out", predict_out}, {"records", records.size()}, {"gap", g.gap}});
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return kExitUsage;
  }

  try {
    action();
    return 0;
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    if (*e.what()) std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
