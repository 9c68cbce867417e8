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

#include "gatedvlad/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <nlohmann/json.hpp>

#include "gatedvlad/errors.hpp"

namespace gatedvlad {

namespace names {
const std::vector<std::string>& big_four() {
  static const std::vector<std::string> kNames = {
      kExpertsWeights, kGatesWeights, kOutputGateWeights, kHidden1Weights};
  return kNames;
}
}  // namespace names

// ---------------------------------------------------------------------------
// Config

ModelConfig ModelConfig::make(int k_video, int hidden, int vocab, int d_video,
                              int d_audio) {
  ModelConfig cfg;
  cfg.k_video = k_video;
  cfg.k_audio = std::max(1, k_video / 2);
  cfg.hidden = hidden;
  cfg.vocab = vocab;
  cfg.d_video = d_video;
  cfg.d_audio = d_audio;
  return cfg;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ValidationError(std::string("model config: ") + what + " must be >= 1");
  };
  positive(k_video, "k_video");
  positive(k_audio, "k_audio");
  positive(hidden, "hidden");
  positive(vocab, "vocab");
  positive(d_video, "d_video");
  positive(d_audio, "d_audio");
  positive(num_experts, "num_experts");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {
      {"k_video", k_video},         {"k_audio", k_audio},
      {"hidden", hidden},           {"vocab", vocab},
      {"d_video", d_video},         {"d_audio", d_audio},
      {"num_experts", num_experts}, {"use_dummy_expert", use_dummy_expert},
      {"normalize_vlad", normalize_vlad},
  };
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.k_video = j.at("k_video").get<int>();
    cfg.k_audio = j.at("k_audio").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.d_video = j.at("d_video").get<int>();
    cfg.d_audio = j.at("d_audio").get<int>();
    cfg.num_experts = j.value("num_experts", 5);
    cfg.use_dummy_expert = j.value("use_dummy_expert", true);
    cfg.normalize_vlad = j.value("normalize_vlad", true);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string ModelConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_json()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t two_h = 2 * static_cast<std::int64_t>(cfg.hidden);
  const std::int64_t v = cfg.vocab;
  return {
      {names::kVideoAssignWeights, {cfg.d_video, cfg.k_video}},
      {names::kVideoAssignBias, {cfg.k_video}},
      {names::kVideoCentroids, {cfg.k_video, cfg.d_video}},
      {names::kAudioAssignWeights, {cfg.d_audio, cfg.k_audio}},
      {names::kAudioAssignBias, {cfg.k_audio}},
      {names::kAudioCentroids, {cfg.k_audio, cfg.d_audio}},
      {names::kHidden1Weights, {cfg.vlad_dim(), cfg.hidden}},
      {names::kBnGamma, {cfg.hidden}},
      {names::kBnBeta, {cfg.hidden}},
      {names::kBnMovingMean, {cfg.hidden}},
      {names::kBnMovingVar, {cfg.hidden}},
      {names::kHidden2Weights, {cfg.hidden, two_h}},
      {names::kHidden2Bias, {two_h}},
      {names::kHiddenGateWeights, {two_h, two_h}},
      {names::kHiddenGateBias, {two_h}},
      {names::kGatesWeights, {two_h, v * cfg.gate_slots()}},
      {names::kExpertsWeights, {two_h, v * cfg.num_experts}},
      {names::kExpertsBias, {v * cfg.num_experts}},
      {names::kOutputGateWeights, {v, v}},
      {names::kOutputGateBias, {v}},
  };
}

// ---------------------------------------------------------------------------
// Parameter conversion

namespace {

const Tensor& checked(const TensorBundle& b, const char* name, const Shape& shape) {
  if (!b.contains(name)) throw ShapeError(std::string("weights: missing tensor '") + name + "'");
  const Tensor& t = b.at(name);
  if (t.shape() != shape) {
    throw ShapeError(std::string("weights: tensor '") + name + "' has shape " +
                     shape_to_string(t.shape()) + ", expected " + shape_to_string(shape));
  }
  return t;
}

MatrixD read_matrix(const TensorBundle& b, const char* name, Eigen::Index rows,
                    Eigen::Index cols) {
  const auto values = checked(b, name, {rows, cols}).to_floats();
  MatrixD m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[r * cols + c];
  }
  return m;
}

VectorD read_vector(const TensorBundle& b, const char* name, Eigen::Index n) {
  const auto values = checked(b, name, {n}).to_floats();
  VectorD v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = values[i];
  return v;
}

Tensor matrix_tensor(const char* name, const MatrixD& m) {
  std::vector<float> values(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      values[r * m.cols() + c] = static_cast<float>(m(r, c));
    }
  }
  return Tensor(name, {m.rows(), m.cols()}, std::move(values));
}

Tensor vector_tensor(const char* name, const VectorD& v) {
  std::vector<float> values(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) values[i] = static_cast<float>(v(i));
  return Tensor(name, {v.size()}, std::move(values));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ModelParameters ModelParameters::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index h = cfg.hidden, h2 = 2 * cfg.hidden, v = cfg.vocab;
  ModelParameters p;
  p.video = {MatrixD::Zero(cfg.d_video, cfg.k_video), VectorD::Zero(cfg.k_video),
             MatrixD::Zero(cfg.k_video, cfg.d_video)};
  p.audio = {MatrixD::Zero(cfg.d_audio, cfg.k_audio), VectorD::Zero(cfg.k_audio),
             MatrixD::Zero(cfg.k_audio, cfg.d_audio)};
  p.hidden1 = MatrixD::Zero(cfg.vlad_dim(), h);
  p.bn_gamma = VectorD::Zero(h);
  p.bn_beta = VectorD::Zero(h);
  p.bn_moving_mean = VectorD::Zero(h);
  p.bn_moving_var = VectorD::Zero(h);
  p.hidden2 = MatrixD::Zero(h, h2);
  p.hidden2_bias = VectorD::Zero(h2);
  p.hidden_gate = MatrixD::Zero(h2, h2);
  p.hidden_gate_bias = VectorD::Zero(h2);
  p.gates = MatrixD::Zero(h2, v * cfg.gate_slots());
  p.experts = MatrixD::Zero(h2, v * cfg.num_experts);
  p.experts_bias = VectorD::Zero(v * cfg.num_experts);
  p.output_gate = MatrixD::Zero(v, v);
  p.output_gate_bias = VectorD::Zero(v);
  return p;
}

ModelParameters ModelParameters::from_bundle(const ModelConfig& cfg, const TensorBundle& b) {
  cfg.validate();
  const Eigen::Index h = cfg.hidden, h2 = 2 * cfg.hidden, v = cfg.vocab;
  ModelParameters p;
  p.video.assign_weights = read_matrix(b, names::kVideoAssignWeights, cfg.d_video, cfg.k_video);
  p.video.assign_bias = read_vector(b, names::kVideoAssignBias, cfg.k_video);
  p.video.centroids = read_matrix(b, names::kVideoCentroids, cfg.k_video, cfg.d_video);
  p.audio.assign_weights = read_matrix(b, names::kAudioAssignWeights, cfg.d_audio, cfg.k_audio);
  p.audio.assign_bias = read_vector(b, names::kAudioAssignBias, cfg.k_audio);
  p.audio.centroids = read_matrix(b, names::kAudioCentroids, cfg.k_audio, cfg.d_audio);
  p.hidden1 = read_matrix(b, names::kHidden1Weights, cfg.vlad_dim(), h);
  p.bn_gamma = read_vector(b, names::kBnGamma, h);
  p.bn_beta = read_vector(b, names::kBnBeta, h);
  p.bn_moving_mean = read_vector(b, names::kBnMovingMean, h);
  p.bn_moving_var = read_vector(b, names::kBnMovingVar, h);
  p.hidden2 = read_matrix(b, names::kHidden2Weights, h, h2);
  p.hidden2_bias = read_vector(b, names::kHidden2Bias, h2);
  p.hidden_gate = read_matrix(b, names::kHiddenGateWeights, h2, h2);
  p.hidden_gate_bias = read_vector(b, names::kHiddenGateBias, h2);
  p.gates = read_matrix(b, names::kGatesWeights, h2, v * cfg.gate_slots());
  p.experts = read_matrix(b, names::kExpertsWeights, h2, v * cfg.num_experts);
  p.experts_bias = read_vector(b, names::kExpertsBias, v * cfg.num_experts);
  p.output_gate = read_matrix(b, names::kOutputGateWeights, v, v);
  p.output_gate_bias = read_vector(b, names::kOutputGateBias, v);
  return p;
}

TensorBundle ModelParameters::to_bundle(bool include_moving_stats) const {
  TensorBundle b;
  b.add(matrix_tensor(names::kVideoAssignWeights, video.assign_weights));
  b.add(vector_tensor(names::kVideoAssignBias, video.assign_bias));
  b.add(matrix_tensor(names::kVideoCentroids, video.centroids));
  b.add(matrix_tensor(names::kAudioAssignWeights, audio.assign_weights));
  b.add(vector_tensor(names::kAudioAssignBias, audio.assign_bias));
  b.add(matrix_tensor(names::kAudioCentroids, audio.centroids));
  b.add(matrix_tensor(names::kHidden1Weights, hidden1));
  b.add(vector_tensor(names::kBnGamma, bn_gamma));
  b.add(vector_tensor(names::kBnBeta, bn_beta));
  if (include_moving_stats) {
    b.add(vector_tensor(names::kBnMovingMean, bn_moving_mean));
    b.add(vector_tensor(names::kBnMovingVar, bn_moving_var));
  }
  b.add(matrix_tensor(names::kHidden2Weights, hidden2));
  b.add(vector_tensor(names::kHidden2Bias, hidden2_bias));
  b.add(matrix_tensor(names::kHiddenGateWeights, hidden_gate));
  b.add(vector_tensor(names::kHiddenGateBias, hidden_gate_bias));
  b.add(matrix_tensor(names::kGatesWeights, gates));
  b.add(matrix_tensor(names::kExpertsWeights, experts));
  b.add(vector_tensor(names::kExpertsBias, experts_bias));
  b.add(matrix_tensor(names::kOutputGateWeights, output_gate));
  b.add(vector_tensor(names::kOutputGateBias, output_gate_bias));
  return b;
}

std::vector<ModelParameters::View> ModelParameters::trainable_views() {
  auto view = [](const char* name, auto& m) {
    return View{name, m.data(), m.size()};
  };
  return {
      view(names::kVideoAssignWeights, video.assign_weights),
      view(names::kVideoAssignBias, video.assign_bias),
      view(names::kVideoCentroids, video.centroids),
      view(names::kAudioAssignWeights, audio.assign_weights),
      view(names::kAudioAssignBias, audio.assign_bias),
      view(names::kAudioCentroids, audio.centroids),
      view(names::kHidden1Weights, hidden1),
      view(names::kBnGamma, bn_gamma),
      view(names::kBnBeta, bn_beta),
      view(names::kHidden2Weights, hidden2),
      view(names::kHidden2Bias, hidden2_bias),
      view(names::kHiddenGateWeights, hidden_gate),
      view(names::kHiddenGateBias, hidden_gate_bias),
      view(names::kGatesWeights, gates),
      view(names::kExpertsWeights, experts),
      view(names::kExpertsBias, experts_bias),
      view(names::kOutputGateWeights, output_gate),
      view(names::kOutputGateBias, output_gate_bias),
  };
}

void ModelParameters::round_to_single() {
  auto round = [](auto& m) {
    m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
  };
  for (auto& view : trainable_views()) {
    Eigen::Map<VectorD> m(view.data, view.size);
    round(m);
  }
  round(bn_moving_mean);
  round(bn_moving_var);
}

TensorBundle init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TensorBundle b;
  for (const auto& [name, shape] : weight_layout(cfg)) {
    const auto n = static_cast<std::size_t>(element_count(shape));
    std::vector<float> values(n, 0.0f);
    if (name == names::kBnGamma || name == names::kBnMovingVar) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (shape.size() == 2) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& x : values) x = static_cast<float>(dist(rng));
    }
    b.add(Tensor(name, shape, std::move(values)));
  }
  return b;
}

TensorBundle zero_weights(const ModelConfig& cfg) {
  TensorBundle b;
  for (const auto& [name, shape] : weight_layout(cfg)) {
    const auto n = static_cast<std::size_t>(element_count(shape));
    b.add(Tensor(name, shape, std::vector<float>(n, name == names::kBnMovingVar ? 1.0f : 0.0f)));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Layers

MatrixD soft_assign(const MatrixD& x, const MatrixD& assign_weights,
                    const VectorD& assign_bias) {
  if (x.cols() != assign_weights.rows() || assign_weights.cols() != assign_bias.size()) {
    throw ShapeError("soft_assign: inconsistent shapes");
  }
  MatrixD logits = x * assign_weights;
  logits.rowwise() += assign_bias.transpose();
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp().matrix();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

namespace {

struct VladCache {
  MatrixD assign;   // N x K
  VectorD mass;     // K, column sums of assign
  MatrixD raw;      // K x D
  VectorD row_norm;
  MatrixD intra;
  double global_norm = 0.0;
  MatrixD out;
};

VladCache vlad_forward(const MatrixD& x, const VladParameters& p, bool normalize) {
  if (x.cols() != p.centroids.cols()) throw ShapeError("netvlad: feature dimension mismatch");
  VladCache c;
  c.assign = soft_assign(x, p.assign_weights, p.assign_bias);
  c.mass = c.assign.colwise().sum().transpose();
  c.raw = c.assign.transpose() * x - c.mass.asDiagonal() * p.centroids;
  if (!normalize) {
    c.out = c.raw;
    return c;
  }
  c.row_norm = c.raw.rowwise().norm();
  c.intra = MatrixD::Zero(c.raw.rows(), c.raw.cols());
  for (Eigen::Index k = 0; k < c.raw.rows(); ++k) {
    if (c.row_norm(k) > 0.0) c.intra.row(k) = c.raw.row(k) / c.row_norm(k);
  }
  c.global_norm = c.intra.norm();
  c.out = c.global_norm > 0.0 ? MatrixD(c.intra / c.global_norm)
                              : MatrixD::Zero(c.raw.rows(), c.raw.cols());
  return c;
}

void vlad_backward(const VladCache& c, const MatrixD& x, const VladParameters& p,
                   bool normalize, const MatrixD& d_out, VladParameters& grad) {
  MatrixD d_raw;
  if (normalize) {
    MatrixD d_intra = MatrixD::Zero(d_out.rows(), d_out.cols());
    if (c.global_norm > 0.0) {
      const double proj = c.out.cwiseProduct(d_out).sum();
      d_intra = (d_out - c.out * proj) / c.global_norm;
    }
    d_raw = MatrixD::Zero(d_out.rows(), d_out.cols());
    for (Eigen::Index k = 0; k < d_out.rows(); ++k) {
      if (c.row_norm(k) <= 0.0) continue;
      const double proj = c.intra.row(k).dot(d_intra.row(k));
      d_raw.row(k) = (d_intra.row(k) - c.intra.row(k) * proj) / c.row_norm(k);
    }
  } else {
    d_raw = d_out;
  }
  grad.centroids.noalias() -= c.mass.asDiagonal() * d_raw;
  // dA(i,k) = sum_j d_raw(k,j) * (x(i,j) - c(k,j))
  const VectorD centroid_proj = d_raw.cwiseProduct(p.centroids).rowwise().sum();
  MatrixD d_assign = x * d_raw.transpose();
  d_assign.rowwise() -= centroid_proj.transpose();
  const VectorD row_dot = c.assign.cwiseProduct(d_assign).rowwise().sum();
  d_assign.colwise() -= row_dot;
  const MatrixD d_logits = c.assign.cwiseProduct(d_assign);
  grad.assign_weights.noalias() += x.transpose() * d_logits;
  grad.assign_bias += d_logits.colwise().sum().transpose();
}

MatrixD flatten_rows(const MatrixD& m) {
  // K x D row-major -> 1 x K*D
  MatrixD out(1, m.size());
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    out.block(0, k * m.cols(), 1, m.cols()) = m.row(k);
  }
  return out;
}

MatrixD unflatten_rows(const Eigen::Ref<const Eigen::RowVectorXd>& v, Eigen::Index rows,
                       Eigen::Index cols) {
  MatrixD out(rows, cols);
  for (Eigen::Index k = 0; k < rows; ++k) out.row(k) = v.segment(k * cols, cols);
  return out;
}

MatrixD sigmoid(const MatrixD& m) {
  return m.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

}  // namespace

MatrixD netvlad_aggregate(const MatrixD& x, const VladParameters& params, bool normalize) {
  return vlad_forward(x, params, normalize).out;
}

VectorD context_gate(const VectorD& x, const MatrixD& weights, const VectorD& bias) {
  if (weights.rows() != x.size() || weights.cols() != x.size() || bias.size() != x.size()) {
    throw ShapeError("context_gate: shape mismatch");
  }
  VectorD a = weights * x + bias;
  return a.unaryExpr([](double z) { return sigmoid(z); }).cwiseProduct(x);
}

MatrixD moe_gate_distribution(const VectorD& h, const ModelParameters& params,
                              const ModelConfig& cfg) {
  if (params.gates.rows() != h.size()) throw ShapeError("moe: input dimension mismatch");
  const int slots = cfg.gate_slots();
  const VectorD logits = params.gates.transpose() * h;
  MatrixD dist(cfg.vocab, slots);
  for (int v = 0; v < cfg.vocab; ++v) {
    const auto seg = logits.segment(static_cast<Eigen::Index>(v) * slots, slots);
    const double m = seg.maxCoeff();
    const VectorD e = (seg.array() - m).exp().matrix();
    dist.row(v) = (e / e.sum()).transpose();
  }
  return dist;
}

VectorD moe_predict(const VectorD& h, const ModelParameters& params, const ModelConfig& cfg) {
  if (params.experts.rows() != h.size()) throw ShapeError("moe: input dimension mismatch");
  const MatrixD gate = moe_gate_distribution(h, params, cfg);
  const VectorD expert_logits = params.experts.transpose() * h + params.experts_bias;
  VectorD p(cfg.vocab);
  for (int v = 0; v < cfg.vocab; ++v) {
    double acc = 0.0;
    for (int m = 0; m < cfg.num_experts; ++m) {
      acc += gate(v, m) * sigmoid(expert_logits(static_cast<Eigen::Index>(v) * cfg.num_experts + m));
    }
    p(v) = acc;
  }
  return p;
}

MatrixD fc_forward(const MatrixD& inputs, ModelParameters& params, Mode mode) {
  if (inputs.cols() != params.hidden1.rows()) throw ShapeError("fc: input length mismatch");
  MatrixD z = inputs * params.hidden1;
  VectorD mean, var;
  if (mode == Mode::kTrain) {
    mean = z.colwise().mean().transpose();
    var = (z.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    update_moving_statistics(params, mean, var);
  } else {
    mean = params.bn_moving_mean;
    var = params.bn_moving_var;
  }
  const VectorD inv_std = (var.array() + kBatchNormEpsilon).rsqrt().matrix();
  MatrixD y = ((z.rowwise() - mean.transpose()) * inv_std.asDiagonal()) *
              params.bn_gamma.asDiagonal();
  y.rowwise() += params.bn_beta.transpose();
  y = y.cwiseMax(0.0);
  MatrixD out = y * params.hidden2;
  out.rowwise() += params.hidden2_bias.transpose();
  return out;
}

VectorD fc_forward(const VectorD& input, const ModelParameters& params) {
  ModelParameters copy = params;
  return fc_forward(MatrixD(input.transpose()), copy, Mode::kInference).row(0).transpose();
}

void update_moving_statistics(ModelParameters& params, const VectorD& batch_mean,
                              const VectorD& batch_var) {
  params.bn_moving_mean =
      kBatchNormMomentum * params.bn_moving_mean + (1.0 - kBatchNormMomentum) * batch_mean;
  params.bn_moving_var =
      kBatchNormMomentum * params.bn_moving_var + (1.0 - kBatchNormMomentum) * batch_var;
}

// ---------------------------------------------------------------------------
// Batched forward with caches, and its adjoint.

namespace {

constexpr double kProbClip = 1e-6;

struct ForwardCache {
  std::vector<VladCache> video, audio;
  MatrixD u;       // B x F
  MatrixD z;       // B x H
  VectorD mean, var, inv_std;
  MatrixD z_hat;   // B x H
  MatrixD bn_out;  // B x H (pre-ReLU)
  MatrixD h1;      // B x H
  MatrixD h2;      // B x 2H
  MatrixD hg_sig;  // B x 2H
  MatrixD hg;      // B x 2H
  std::vector<MatrixD> gate;  // per example V x slots
  MatrixD expert_sig;         // B x V*M
  MatrixD p;       // B x V (MoE)
  MatrixD og_sig;  // B x V
  MatrixD y;       // B x V
};

MatrixD to_double(const FrameMatrix& m) { return m.cast<double>(); }

void check_features(const ModelConfig& cfg, const FrameFeatures& f) {
  if (f.video.cols() != cfg.d_video || f.audio.cols() != cfg.d_audio ||
      f.video.rows() != f.audio.rows() || f.video.rows() < 1) {
    throw ShapeError("features do not match model config");
  }
}

ForwardCache forward_batch(const ModelConfig& cfg, const ModelParameters& p,
                           const std::vector<const FrameFeatures*>& batch, Mode mode) {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  if (b == 0) throw ShapeError("empty batch");
  ForwardCache c;
  c.u.resize(b, cfg.vlad_dim());
  const Eigen::Index video_len = static_cast<Eigen::Index>(cfg.k_video) * cfg.d_video;
  const Eigen::Index audio_len = static_cast<Eigen::Index>(cfg.k_audio) * cfg.d_audio;
  for (Eigen::Index i = 0; i < b; ++i) {
    check_features(cfg, *batch[i]);
    c.video.push_back(vlad_forward(to_double(batch[i]->video), p.video, cfg.normalize_vlad));
    c.audio.push_back(vlad_forward(to_double(batch[i]->audio), p.audio, cfg.normalize_vlad));
    c.u.block(i, 0, 1, video_len) = flatten_rows(c.video.back().out);
    c.u.block(i, video_len, 1, audio_len) = flatten_rows(c.audio.back().out);
  }

  c.z = c.u * p.hidden1;
  if (mode == Mode::kTrain) {
    c.mean = c.z.colwise().mean().transpose();
    c.var = (c.z.rowwise() - c.mean.transpose()).array().square().colwise().mean().transpose();
  } else {
    c.mean = p.bn_moving_mean;
    c.var = p.bn_moving_var;
  }
  c.inv_std = (c.var.array() + kBatchNormEpsilon).rsqrt().matrix();
  c.z_hat = (c.z.rowwise() - c.mean.transpose()) * c.inv_std.asDiagonal();
  c.bn_out = c.z_hat * p.bn_gamma.asDiagonal();
  c.bn_out.rowwise() += p.bn_beta.transpose();
  c.h1 = c.bn_out.cwiseMax(0.0);
  c.h2 = c.h1 * p.hidden2;
  c.h2.rowwise() += p.hidden2_bias.transpose();

  MatrixD a = c.h2 * p.hidden_gate.transpose();
  a.rowwise() += p.hidden_gate_bias.transpose();
  c.hg_sig = sigmoid(a);
  c.hg = c.hg_sig.cwiseProduct(c.h2);

  const int slots = cfg.gate_slots();
  const int experts = cfg.num_experts;
  const MatrixD gate_logits = c.hg * p.gates;
  MatrixD expert_logits = c.hg * p.experts;
  expert_logits.rowwise() += p.experts_bias.transpose();
  c.expert_sig = sigmoid(expert_logits);
  c.p.resize(b, cfg.vocab);
  c.gate.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    MatrixD& g = c.gate[i];
    g.resize(cfg.vocab, slots);
    for (int v = 0; v < cfg.vocab; ++v) {
      const auto seg = gate_logits.row(i).segment(static_cast<Eigen::Index>(v) * slots, slots);
      const double m = seg.maxCoeff();
      const Eigen::RowVectorXd e = (seg.array() - m).exp().matrix();
      g.row(v) = e / e.sum();
      double acc = 0.0;
      for (int k = 0; k < experts; ++k) {
        acc += g(v, k) * c.expert_sig(i, static_cast<Eigen::Index>(v) * experts + k);
      }
      c.p(i, v) = acc;
    }
  }

  MatrixD ao = c.p * p.output_gate.transpose();
  ao.rowwise() += p.output_gate_bias.transpose();
  c.og_sig = sigmoid(ao);
  c.y = c.og_sig.cwiseProduct(c.p);
  return c;
}

double mean_bce(const MatrixD& y, const MatrixD& targets) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index v = 0; v < y.cols(); ++v) {
      const double p = std::clamp(y(i, v), kProbClip, 1.0 - kProbClip);
      const double t = targets(i, v);
      total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
  }
  return total / static_cast<double>(y.size());
}

void check_targets(const ModelConfig& cfg, const Batch& batch) {
  if (batch.targets.rows() != static_cast<Eigen::Index>(batch.features.size()) ||
      batch.targets.cols() != cfg.vocab) {
    throw ShapeError("targets must be batch x vocab");
  }
}

}  // namespace

VectorD forward(const ModelConfig& cfg, const TensorBundle& weights,
                const FrameFeatures& features, Mode mode) {
  const ModelParameters p = ModelParameters::from_bundle(cfg, weights);
  return forward_batch(cfg, p, {&features}, mode).y.row(0).transpose();
}

GatedNetVlad::GatedNetVlad(ModelConfig cfg, const TensorBundle& weights)
    : cfg_(cfg), params_(ModelParameters::from_bundle(cfg, weights)) {}

GatedNetVlad::GatedNetVlad(ModelConfig cfg, ModelParameters params)
    : cfg_(cfg), params_(std::move(params)) {}

VectorD GatedNetVlad::predict(const FrameFeatures& features) const {
  return forward_batch(cfg_, params_, {&features}, Mode::kInference).y.row(0).transpose();
}

double batch_loss(const ModelConfig& cfg, const ModelParameters& params, const Batch& batch) {
  check_targets(cfg, batch);
  return mean_bce(forward_batch(cfg, params, batch.features, Mode::kTrain).y, batch.targets);
}

MatrixD hidden1_preactivations(const ModelConfig& cfg, const ModelParameters& params,
                               const Batch& batch) {
  return forward_batch(cfg, params, batch.features, Mode::kTrain).bn_out;
}

GradientResult compute_gradients(const ModelConfig& cfg, const ModelParameters& p,
                                 const Batch& batch) {
  check_targets(cfg, batch);
  const ForwardCache c = forward_batch(cfg, p, batch.features, Mode::kTrain);
  const Eigen::Index b = c.y.rows();
  const int slots = cfg.gate_slots();
  const int experts = cfg.num_experts;

  GradientResult r;
  r.loss = mean_bce(c.y, batch.targets);
  r.batch_mean = c.mean;
  r.batch_var = c.var;
  ModelParameters& g = r.gradient;
  g = ModelParameters::zeros(cfg);

  // Loss.
  MatrixD d_y(b, cfg.vocab);
  const double scale = 1.0 / static_cast<double>(c.y.size());
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index v = 0; v < cfg.vocab; ++v) {
      const double y = c.y(i, v);
      const double t = batch.targets(i, v);
      d_y(i, v) = (y > kProbClip && y < 1.0 - kProbClip)
                      ? scale * (-t / y + (1.0 - t) / (1.0 - y))
                      : 0.0;
    }
  }

  // Output context gate.
  MatrixD d_p = d_y.cwiseProduct(c.og_sig);
  const MatrixD d_ao = d_y.cwiseProduct(c.p).cwiseProduct(
      c.og_sig.cwiseProduct((1.0 - c.og_sig.array()).matrix()));
  g.output_gate.noalias() = d_ao.transpose() * c.p;
  g.output_gate_bias = d_ao.colwise().sum().transpose();
  d_p.noalias() += d_ao * p.output_gate;

  // Mixture of experts.
  MatrixD d_gate_logits(b, static_cast<Eigen::Index>(cfg.vocab) * slots);
  MatrixD d_expert_logits(b, static_cast<Eigen::Index>(cfg.vocab) * experts);
  std::vector<double> d_gate(slots);
  for (Eigen::Index i = 0; i < b; ++i) {
    const MatrixD& gate = c.gate[i];
    for (int v = 0; v < cfg.vocab; ++v) {
      const double dp = d_p(i, v);
      double weighted = 0.0;
      for (int k = 0; k < slots; ++k) {
        const Eigen::Index e = static_cast<Eigen::Index>(v) * experts + k;
        d_gate[k] = k < experts ? dp * c.expert_sig(i, e) : 0.0;
        weighted += gate(v, k) * d_gate[k];
      }
      for (int k = 0; k < slots; ++k) {
        d_gate_logits(i, static_cast<Eigen::Index>(v) * slots + k) =
            gate(v, k) * (d_gate[k] - weighted);
      }
      for (int k = 0; k < experts; ++k) {
        const Eigen::Index e = static_cast<Eigen::Index>(v) * experts + k;
        const double s = c.expert_sig(i, e);
        d_expert_logits(i, e) = dp * gate(v, k) * s * (1.0 - s);
      }
    }
  }
  g.gates.noalias() = c.hg.transpose() * d_gate_logits;
  g.experts.noalias() = c.hg.transpose() * d_expert_logits;
  g.experts_bias = d_expert_logits.colwise().sum().transpose();
  MatrixD d_hg = d_gate_logits * p.gates.transpose();
  d_hg.noalias() += d_expert_logits * p.experts.transpose();

  // Hidden context gate.
  MatrixD d_h2 = d_hg.cwiseProduct(c.hg_sig);
  const MatrixD d_ag = d_hg.cwiseProduct(c.h2).cwiseProduct(
      c.hg_sig.cwiseProduct((1.0 - c.hg_sig.array()).matrix()));
  g.hidden_gate.noalias() = d_ag.transpose() * c.h2;
  g.hidden_gate_bias = d_ag.colwise().sum().transpose();
  d_h2.noalias() += d_ag * p.hidden_gate;

  // Second FC layer and ReLU.
  g.hidden2.noalias() = c.h1.transpose() * d_h2;
  g.hidden2_bias = d_h2.colwise().sum().transpose();
  MatrixD d_bn = d_h2 * p.hidden2.transpose();
  d_bn = d_bn.cwiseProduct((c.bn_out.array() > 0.0).cast<double>().matrix());

  // Batch norm with batch statistics.
  g.bn_gamma = d_bn.cwiseProduct(c.z_hat).colwise().sum().transpose();
  g.bn_beta = d_bn.colwise().sum().transpose();
  const MatrixD d_zhat = d_bn * p.bn_gamma.asDiagonal();
  const Eigen::RowVectorXd sum_dzhat = d_zhat.colwise().sum();
  const Eigen::RowVectorXd sum_dzhat_zhat = d_zhat.cwiseProduct(c.z_hat).colwise().sum();
  const double inv_b = 1.0 / static_cast<double>(b);
  MatrixD d_z = d_zhat;
  d_z.rowwise() -= sum_dzhat * inv_b;
  d_z -= c.z_hat * (sum_dzhat_zhat * inv_b).asDiagonal();
  d_z = d_z * c.inv_std.asDiagonal();

  // First FC layer.
  g.hidden1.noalias() = c.u.transpose() * d_z;
  const MatrixD d_u = d_z * p.hidden1.transpose();

  // NetVLAD.
  const Eigen::Index video_len = static_cast<Eigen::Index>(cfg.k_video) * cfg.d_video;
  const Eigen::Index audio_len = static_cast<Eigen::Index>(cfg.k_audio) * cfg.d_audio;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Eigen::RowVectorXd row = d_u.row(i);
    vlad_backward(c.video[i], to_double(batch.features[i]->video), p.video, cfg.normalize_vlad,
                  unflatten_rows(row.segment(0, video_len), cfg.k_video, cfg.d_video), g.video);
    vlad_backward(c.audio[i], to_double(batch.features[i]->audio), p.audio, cfg.normalize_vlad,
                  unflatten_rows(row.segment(video_len, audio_len), cfg.k_audio, cfg.d_audio),
                  g.audio);
  }
  return r;
}

TensorBundle backward(const ModelConfig& cfg, const TensorBundle& weights, const Batch& batch) {
  const ModelParameters p = ModelParameters::from_bundle(cfg, weights);
  return compute_gradients(cfg, p, batch).gradient.to_bundle(false);
}

}  // namespace gatedvlad
