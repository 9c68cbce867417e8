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

#include "gatedvlad/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "gatedvlad/errors.hpp"

namespace gatedvlad {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("train config: learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (total_steps < 0) throw ValidationError("train config: total_steps must be >= 0");
  if (checkpoint_interval < 1) {
    throw ValidationError("train config: checkpoint_interval must be >= 1");
  }
  if (total_steps > 0 && checkpoint_interval > total_steps) {
    throw ValidationError("train config: checkpoint_interval exceeds total_steps");
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::json j = {
      {"learning_rate", learning_rate},
      {"batch_size", batch_size},
      {"total_steps", total_steps},
      {"checkpoint_interval", checkpoint_interval},
      {"seed", seed},
      {"optimizer", optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"beta1", beta1},
      {"beta2", beta2},
      {"epsilon", epsilon},
  };
  return j.dump();
}

double bce_loss(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw ShapeError("bce_loss: probs and labels must be non-empty and equal length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kBceClip, 1.0 - kBceClip);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

TensorBundle Checkpoint::to_bundle() const {
  TensorBundle b = weights;
  b.metadata()["step"] = std::to_string(step);
  b.metadata()["model_config"] = config.to_json();
  b.metadata()["config_hash"] = config.hash();
  return b;
}

Checkpoint Checkpoint::from_bundle(TensorBundle bundle) {
  const auto& meta = bundle.metadata();
  auto it_step = meta.find("step");
  auto it_cfg = meta.find("model_config");
  if (it_step == meta.end() || it_cfg == meta.end()) {
    throw FormatError("checkpoint: bundle lacks step/model_config metadata");
  }
  Checkpoint c;
  try {
    c.step = std::stoll(it_step->second);
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad step metadata '" + it_step->second + "'");
  }
  c.config = ModelConfig::from_json(it_cfg->second);
  auto it_hash = meta.find("config_hash");
  if (it_hash != meta.end() && it_hash->second != c.config.hash()) {
    throw ValidationError("checkpoint: config hash does not match model_config");
  }
  bundle.metadata().clear();
  c.weights = std::move(bundle);
  ModelParameters::from_bundle(c.config, c.weights);  // shape check
  return c;
}

void Optimizer::step(ModelParameters& params, ModelParameters& gradient) {
  auto p_views = params.trainable_views();
  auto g_views = gradient.trainable_views();
  ++t_;
  if (cfg_.optimizer == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < p_views.size(); ++i) {
      Eigen::Map<VectorD> p(p_views[i].data, p_views[i].size);
      Eigen::Map<const VectorD> g(g_views[i].data, g_views[i].size);
      p -= cfg_.learning_rate * g;
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& v : p_views) {
      m_.push_back(VectorD::Zero(v.size));
      v_.push_back(VectorD::Zero(v.size));
    }
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < p_views.size(); ++i) {
    Eigen::Map<VectorD> p(p_views[i].data, p_views[i].size);
    Eigen::Map<const VectorD> g(g_views[i].data, g_views[i].size);
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -= cfg_.learning_rate * (m_[i].array() / c1) /
                 ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
  }
}

namespace {

bool all_finite(ModelParameters& p) {
  for (const auto& v : p.trainable_views()) {
    for (Eigen::Index i = 0; i < v.size; ++i) {
      if (!std::isfinite(v.data[i])) return false;
    }
  }
  return true;
}

Checkpoint snapshot(const ModelConfig& cfg, const ModelParameters& params, std::int64_t step) {
  return {step, cfg, params.to_bundle(true)};
}

void check_dataset(const ModelConfig& cfg, const Dataset& data) {
  if (data.videos.empty()) throw InputError("dataset is empty");
  if (data.vocab != cfg.vocab || data.d_video != cfg.d_video || data.d_audio != cfg.d_audio) {
    throw ShapeError("dataset dimensions (vocab " + std::to_string(data.vocab) + ", video " +
                     std::to_string(data.d_video) + ", audio " + std::to_string(data.d_audio) +
                     ") do not match the model config");
  }
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Dataset& dataset, const TrainProgress& progress) {
  model_cfg.validate();
  train_cfg.validate();
  check_dataset(model_cfg, dataset);

  ModelParameters params =
      ModelParameters::from_bundle(model_cfg, init_weights(model_cfg, train_cfg.seed));
  Optimizer optimizer(train_cfg);
  TrainResult result;
  if (train_cfg.total_steps == 0) {
    result.checkpoints.push_back(snapshot(model_cfg, params, 0));
    return result;
  }

  const std::size_t n = dataset.videos.size();
  const std::size_t batch_size = std::min<std::size_t>(train_cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(train_cfg.seed ^ 0x5deece66dull);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  Batch batch;
  batch.targets.resize(static_cast<Eigen::Index>(batch_size), model_cfg.vocab);
  for (std::int64_t step = 1; step <= train_cfg.total_steps; ++step) {
    if (cursor + batch_size > n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    batch.features.clear();
    batch.targets.setZero();
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto& video = dataset.videos[order[cursor + i]];
      batch.features.push_back(&video.frames);
      for (int l : video.labels) batch.targets(static_cast<Eigen::Index>(i), l) = 1.0;
    }
    cursor += batch_size;

    GradientResult g = compute_gradients(model_cfg, params, batch);
    if (!std::isfinite(g.loss)) {
      throw TrainingError("training diverged: non-finite loss at step " + std::to_string(step));
    }
    if (!all_finite(g.gradient) || !g.batch_mean.allFinite() || !g.batch_var.allFinite()) {
      throw TrainingError("training diverged: non-finite gradient at step " +
                          std::to_string(step));
    }
    update_moving_statistics(params, g.batch_mean, g.batch_var);
    optimizer.step(params, g.gradient);
    params.round_to_single();
    result.loss_curve.emplace_back(step, g.loss);
    if (progress) progress(step, g.loss);

    if (step % train_cfg.checkpoint_interval == 0 || step == train_cfg.total_steps) {
      result.checkpoints.push_back(snapshot(model_cfg, params, step));
    }
  }
  return result;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw ValidationError("average_checkpoints: no checkpoints");
  const Checkpoint& first = checkpoints.front();
  for (const auto& c : checkpoints) {
    if (c.config.hash() != first.config.hash()) {
      throw IncompatibleError("average_checkpoints: model configs differ");
    }
    if (c.weights.names() != first.weights.names()) {
      throw IncompatibleError("average_checkpoints: tensor names differ");
    }
    for (const auto& [name, t] : c.weights.entries()) {
      if (t.shape() != first.weights.at(name).shape()) {
        throw IncompatibleError("average_checkpoints: shape mismatch for '" + name + "'");
      }
    }
  }

  Checkpoint out;
  out.config = first.config;
  out.step = 0;
  for (const auto& c : checkpoints) out.step = std::max(out.step, c.step);

  const auto k = checkpoints.size();
  std::vector<std::vector<float>> member_values(k);
  std::vector<double> column(k);
  for (const auto& [name, t] : first.weights.entries()) {
    for (std::size_t m = 0; m < k; ++m) {
      member_values[m] = checkpoints[m].weights.at(name).to_floats();
    }
    std::vector<float> mean(t.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      for (std::size_t m = 0; m < k; ++m) column[m] = member_values[m][i];
      // Fixed summation order makes the result independent of argument order.
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (double v : column) sum += v;
      mean[i] = static_cast<float>(sum / static_cast<double>(k));
    }
    out.weights.add(Tensor(name, t.shape(), std::move(mean)));
  }
  return out;
}

std::vector<PredictionRecord> predict_dataset(const GatedNetVlad& model, const Dataset& data,
                                              int k, int threads) {
  const std::size_t n = data.videos.size();
  std::vector<std::vector<PredictionRecord>> per_video(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const VectorD p = model.predict(data.videos[i].frames);
      per_video[i] = top_k_predictions({p.data(), static_cast<std::size_t>(p.size())},
                                       data.videos[i].video_id, k);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
  }
  std::vector<PredictionRecord> records;
  records.reserve(n * static_cast<std::size_t>(k));
  for (auto& v : per_video) {
    for (auto& r : v) records.push_back(std::move(r));
  }
  return records;
}

GapResult evaluate(const ModelConfig& cfg, const TensorBundle& weights, const Dataset& data,
                   int k, int threads) {
  check_dataset(cfg, data);
  const GatedNetVlad model(cfg, weights);
  return gap_at_k(predict_dataset(model, data, k, threads), data.ground_truth());
}

std::string checkpoint_filename(std::int64_t step) {
  return "ckpt-" + std::to_string(step) + ".tb";
}

void write_run_directory(const std::filesystem::path& dir, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const TrainResult& result) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["model_config"] = nlohmann::json::parse(model_cfg.to_json());
  manifest["train_config"] = nlohmann::json::parse(train_cfg.to_json());
  manifest["seed"] = train_cfg.seed;
  manifest["config_hash"] = model_cfg.hash();
  manifest["loss_curve"] = "loss.csv";
  nlohmann::json ckpts = nlohmann::json::array();
  for (const auto& c : result.checkpoints) {
    const auto file = checkpoint_filename(c.step);
    save_bundle(c.to_bundle(), dir / file);
    ckpts.push_back({{"step", c.step}, {"file", file}});
  }
  manifest["checkpoints"] = ckpts;
  if (!result.loss_curve.empty()) {
    manifest["initial_loss"] = result.loss_curve.front().second;
    manifest["final_loss"] = result.loss_curve.back().second;
  }

  std::ofstream loss(dir / "loss.csv", std::ios::trunc);
  loss << "step,loss\n";
  char buf[64];
  for (const auto& [step, value] : result.loss_curve) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g\n", static_cast<long long>(step), value);
    loss << buf;
  }
  std::ofstream run(dir / "run.json", std::ios::trunc);
  run << manifest.dump(2) << '\n';
  if (!loss || !run) throw RuntimeFailure("failed writing run directory " + dir.string());
}

}  // namespace gatedvlad
