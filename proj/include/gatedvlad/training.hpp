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

#ifndef GATEDVLAD_TRAINING_HPP_
#define GATEDVLAD_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gatedvlad/bundle.hpp"
#include "gatedvlad/datagen.hpp"
#include "gatedvlad/metrics.hpp"
#include "gatedvlad/model.hpp"

namespace gatedvlad {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 32;
  std::int64_t total_steps = 1000;
  std::int64_t checkpoint_interval = 100;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  std::string to_json() const;
};

// Probabilities are clipped to [1e-6, 1 - 1e-6] before taking logs.
inline constexpr double kBceClip = 1e-6;

// Mean over classes of the clipped binary cross-entropy.
double bce_loss(std::span<const double> probs, std::span<const double> labels);

struct Checkpoint {
  std::int64_t step = 0;
  ModelConfig config;
  TensorBundle weights;  // no metadata; see to_bundle()

  // Weights plus "step", "model_config" and "config_hash" metadata.
  TensorBundle to_bundle() const;
  // Throws FormatError when the metadata is missing.
  static Checkpoint from_bundle(TensorBundle bundle);
};

// Bias-corrected Adam (or plain SGD) over ModelParameters::trainable_views().
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(ModelParameters& params, ModelParameters& gradient);
  std::int64_t steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<VectorD> m_, v_;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<std::pair<std::int64_t, double>> loss_curve;  // (step, batch loss)
};

using TrainProgress = std::function<void(std::int64_t step, double loss)>;

// Deterministic in (configs, seed, dataset). Checkpoints are emitted every
// checkpoint_interval steps and at the final step; total_steps == 0 yields
// only the initial weights. Throws TrainingError when the loss stops being
// finite.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Dataset& dataset, const TrainProgress& progress = {});

// Elementwise mean of every tensor, moving statistics included. The result
// carries the largest member step.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);

// Top-k records for every video, in dataset order.
std::vector<PredictionRecord> predict_dataset(const GatedNetVlad& model, const Dataset& data,
                                              int k = kDefaultTopK, int threads = 1);

GapResult evaluate(const ModelConfig& cfg, const TensorBundle& weights, const Dataset& data,
                   int k = kDefaultTopK, int threads = 1);

std::string checkpoint_filename(std::int64_t step);

// Writes ckpt-<step>.tb files, loss.csv and run.json into `dir`.
void write_run_directory(const std::filesystem::path& dir, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const TrainResult& result);

}  // namespace gatedvlad

#endif  // GATEDVLAD_TRAINING_HPP_
