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

#ifndef GATEDVLAD_MODEL_HPP_
#define GATEDVLAD_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gatedvlad/bundle.hpp"

namespace gatedvlad {

using MatrixD = Eigen::MatrixXd;
using VectorD = Eigen::VectorXd;
using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kBatchNormEpsilon = 1e-5;

// Canonical tensor names. The four big tensors are what float16
// compression casts by default.
namespace names {
inline constexpr const char* kVideoAssignWeights = "tower/video_vlad/assign_weights";
inline constexpr const char* kVideoAssignBias = "tower/video_vlad/assign_bias";
inline constexpr const char* kVideoCentroids = "tower/video_vlad/centroids";
inline constexpr const char* kAudioAssignWeights = "tower/audio_vlad/assign_weights";
inline constexpr const char* kAudioAssignBias = "tower/audio_vlad/assign_bias";
inline constexpr const char* kAudioCentroids = "tower/audio_vlad/centroids";
inline constexpr const char* kHidden1Weights = "tower/hidden1_weights/hidden1_weights";
inline constexpr const char* kBnGamma = "tower/hidden1_bn/gamma";
inline constexpr const char* kBnBeta = "tower/hidden1_bn/beta";
inline constexpr const char* kBnMovingMean = "tower/hidden1_bn/moving_mean";
inline constexpr const char* kBnMovingVar = "tower/hidden1_bn/moving_variance";
inline constexpr const char* kHidden2Weights = "tower/hidden2/weights";
inline constexpr const char* kHidden2Bias = "tower/hidden2/bias";
inline constexpr const char* kHiddenGateWeights = "tower/hidden_gate/weights";
inline constexpr const char* kHiddenGateBias = "tower/hidden_gate/bias";
inline constexpr const char* kGatesWeights = "tower/gates/weights";
inline constexpr const char* kExpertsWeights = "tower/experts/weights";
inline constexpr const char* kExpertsBias = "tower/experts/biases";
inline constexpr const char* kOutputGateWeights = "tower/gating_prob_weights";
inline constexpr const char* kOutputGateBias = "tower/gating_prob_biases";

const std::vector<std::string>& big_four();
}  // namespace names

enum class Mode { kTrain, kInference };

struct ModelConfig {
  int k_video = 8;
  int k_audio = 4;
  int hidden = 32;
  int vocab = 25;
  int d_video = 1024;
  int d_audio = 128;
  int num_experts = 5;
  bool use_dummy_expert = true;
  bool normalize_vlad = true;

  // Audio cluster count defaults to max(1, k_video / 2).
  static ModelConfig make(int k_video, int hidden, int vocab, int d_video = 1024,
                          int d_audio = 128);

  // Throws ValidationError on non-positive dimensions.
  void validate() const;

  int vlad_dim() const { return k_video * d_video + k_audio * d_audio; }
  int gate_slots() const { return num_experts + (use_dummy_expert ? 1 : 0); }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  // FNV-1a over the canonical JSON, hex encoded.
  std::string hash() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Name and shape of every tensor in the weight bundle, in bundle order.
std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& cfg);

struct FrameFeatures {
  FrameMatrix video;  // N x d_video
  FrameMatrix audio;  // N x d_audio

  int frames() const { return static_cast<int>(video.rows()); }
};

struct VladParameters {
  MatrixD assign_weights;  // D x K
  VectorD assign_bias;     // K
  MatrixD centroids;       // K x D
};

// Double-precision working copy of a weight bundle. Storage stays in the
// bundle's precision; all arithmetic happens here.
struct ModelParameters {
  VladParameters video;
  VladParameters audio;
  MatrixD hidden1;  // vlad_dim x H
  VectorD bn_gamma, bn_beta, bn_moving_mean, bn_moving_var;
  MatrixD hidden2;  // H x 2H
  VectorD hidden2_bias;
  MatrixD hidden_gate;  // 2H x 2H
  VectorD hidden_gate_bias;
  MatrixD gates;    // 2H x V*gate_slots
  MatrixD experts;  // 2H x V*num_experts
  VectorD experts_bias;
  MatrixD output_gate;  // V x V
  VectorD output_gate_bias;

  static ModelParameters zeros(const ModelConfig& cfg);
  // Throws ShapeError when the bundle does not match `cfg`.
  static ModelParameters from_bundle(const ModelConfig& cfg, const TensorBundle& b);
  TensorBundle to_bundle(bool include_moving_stats = true) const;

  struct View {
    const char* name;
    double* data;
    Eigen::Index size;
  };
  // Every trainable parameter (moving statistics excluded), in a fixed order.
  std::vector<View> trainable_views();

  // Rounds every value to the nearest binary32.
  void round_to_single();
};

// Xavier-uniform matrices, zero biases, BN gamma=1 beta=0, moving mean 0 and
// moving variance 1. Deterministic in `seed`.
TensorBundle init_weights(const ModelConfig& cfg, std::uint64_t seed);
// All-zero weights with moving variance 1.
TensorBundle zero_weights(const ModelConfig& cfg);

// Row-wise softmax of X * W + b.
MatrixD soft_assign(const MatrixD& x, const MatrixD& assign_weights,
                    const VectorD& assign_bias);

// K x D residual descriptor. With `normalize` each cluster row and then the
// flattened descriptor are L2-normalized; zero rows stay zero.
MatrixD netvlad_aggregate(const MatrixD& x, const VladParameters& params, bool normalize);

// Input is B x vlad_dim, output B x 2H. Train mode normalizes with batch
// statistics and folds them into the moving averages of `params`.
MatrixD fc_forward(const MatrixD& inputs, ModelParameters& params, Mode mode);
VectorD fc_forward(const VectorD& input, const ModelParameters& params);

// sigmoid(W x + b) * x.
VectorD context_gate(const VectorD& x, const MatrixD& weights, const VectorD& bias);

// V x gate_slots gate distribution; the dummy slot, when present, is last.
MatrixD moe_gate_distribution(const VectorD& h, const ModelParameters& params,
                              const ModelConfig& cfg);
VectorD moe_predict(const VectorD& h, const ModelParameters& params,
                    const ModelConfig& cfg);

// Full pipeline for one video; train mode treats it as a batch of one.
VectorD forward(const ModelConfig& cfg, const TensorBundle& weights,
                const FrameFeatures& features, Mode mode = Mode::kInference);

// Inference wrapper that widens a bundle once and reuses it.
class GatedNetVlad {
 public:
  GatedNetVlad(ModelConfig cfg, const TensorBundle& weights);
  GatedNetVlad(ModelConfig cfg, ModelParameters params);

  VectorD predict(const FrameFeatures& features) const;
  const ModelConfig& config() const { return cfg_; }
  const ModelParameters& parameters() const { return params_; }

 private:
  ModelConfig cfg_;
  ModelParameters params_;
};

struct Batch {
  std::vector<const FrameFeatures*> features;
  MatrixD targets;  // B x V, entries in [0, 1]
};

struct GradientResult {
  double loss = 0.0;
  ModelParameters gradient;  // moving statistics left at zero
  VectorD batch_mean;        // hidden1 batch statistics used by BN
  VectorD batch_var;
};

// Mean binary cross-entropy of the train-mode forward pass and its exact
// gradient.
GradientResult compute_gradients(const ModelConfig& cfg, const ModelParameters& params,
                                 const Batch& batch);
// Train-mode loss only; does not touch moving statistics.
double batch_loss(const ModelConfig& cfg, const ModelParameters& params,
                  const Batch& batch);
// Train-mode batch-norm output before the ReLU (B x H). Used to detect
// activation-pattern changes when comparing against finite differences.
MatrixD hidden1_preactivations(const ModelConfig& cfg, const ModelParameters& params,
                               const Batch& batch);
// Gradient bundle with the trainable tensor names and shapes.
TensorBundle backward(const ModelConfig& cfg, const TensorBundle& weights,
                      const Batch& batch);

// Folds batch statistics into the moving averages.
void update_moving_statistics(ModelParameters& params, const VectorD& batch_mean,
                              const VectorD& batch_var);

}  // namespace gatedvlad

#endif  // GATEDVLAD_MODEL_HPP_
