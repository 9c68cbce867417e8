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


#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gatedvlad/model.hpp"
#include "test_util.hpp"

namespace gatedvlad {
namespace {

using testing::GradientProblem;

TEST(Backward, MatchesCentralFiniteDifferences) {
  std::mt19937_64 rng(2718);
  std::size_t checked = 0, skipped = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const GradientProblem prob = testing::random_gradient_problem(rng);
    ModelParameters params =
        ModelParameters::from_bundle(prob.cfg, testing::random_weights(prob.cfg, rng(), 0.5));
    // Populated moving statistics must not influence train-mode gradients.
    params.bn_moving_mean.setConstant(0.3);
    EXPECT_NEAR(compute_gradients(prob.cfg, params, prob.batch).loss,
                batch_loss(prob.cfg, params, prob.batch), 1e-14);
    const auto r = testing::finite_difference_check(prob.cfg, params, prob.batch);
    EXPECT_EQ(r.failed, 0u) << "trial " << trial << ": " << r.first_failure;
    checked += r.checked;
    skipped += r.skipped;
  }
  EXPECT_GT(checked, 2000u);
  EXPECT_LE(skipped * 50, checked);
}

TEST(Backward, ZeroGradientAtSymmetricStationaryPoint) {
  const ModelConfig cfg = testing::toy_config(4, 2, 3);
  std::vector<FrameFeatures> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(testing::random_features(cfg, 2 + i, 30 + i));
  Batch batch;
  for (const auto& f : frames) batch.features.push_back(&f);
  batch.targets = MatrixD::Constant(3, cfg.vocab, 5.0 / 24.0);
  const TensorBundle g = backward(cfg, zero_weights(cfg), batch);
  for (const auto& [name, t] : g.entries()) {
    for (float v : t.to_floats()) EXPECT_NEAR(v, 0.0f, 1e-12f) << name;
  }
}

TEST(Backward, DuplicatedBatchLeavesGradientUnchanged) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const GradientProblem prob = testing::random_gradient_problem(rng);
    const ModelParameters params =
        ModelParameters::from_bundle(prob.cfg, testing::random_weights(prob.cfg, rng(), 0.5));
    Batch doubled;
    const auto b = prob.batch.targets.rows();
    doubled.targets = MatrixD(2 * b, prob.cfg.vocab);
    for (Eigen::Index i = 0; i < b; ++i) {
      doubled.features.push_back(prob.batch.features[i]);
      doubled.features.push_back(prob.batch.features[i]);
      doubled.targets.row(2 * i) = prob.batch.targets.row(i);
      doubled.targets.row(2 * i + 1) = prob.batch.targets.row(i);
    }
    GradientResult once = compute_gradients(prob.cfg, params, prob.batch);
    GradientResult twice = compute_gradients(prob.cfg, params, doubled);
    EXPECT_NEAR(once.loss, twice.loss, 1e-12);
    auto a = once.gradient.trainable_views();
    auto c = twice.gradient.trainable_views();
    for (std::size_t t = 0; t < a.size(); ++t) {
      for (Eigen::Index i = 0; i < a[t].size; ++i) {
        ASSERT_NEAR(a[t].data[i], c[t].data[i], 1e-10 * (1.0 + std::abs(a[t].data[i])))
            << a[t].name;
      }
    }
  }
}

TEST(Backward, GradientBundleMirrorsTrainableTensors) {
  const ModelConfig cfg = testing::toy_config();
  const auto w = testing::random_weights(cfg, 40);
  const auto f = testing::random_features(cfg, 3, 41);
  Batch batch;
  batch.features = {&f};
  batch.targets = MatrixD::Zero(1, cfg.vocab);
  batch.targets(0, 1) = 1.0;
  const TensorBundle g = backward(cfg, w, batch);
  for (const auto& [name, t] : w.entries()) {
    if (name == names::kBnMovingMean || name == names::kBnMovingVar) {
      EXPECT_FALSE(g.contains(name));
    } else {
      ASSERT_TRUE(g.contains(name)) << name;
      EXPECT_EQ(g.at(name).shape(), t.shape());
    }
  }
}

TEST(Backward, BatchStatisticsFeedMovingAverages) {
  const ModelConfig cfg = testing::toy_config();
  std::mt19937_64 rng(42);
  ModelParameters params = ModelParameters::from_bundle(cfg, testing::random_weights(cfg, 43));
  std::vector<FrameFeatures> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(testing::random_features(cfg, 3, rng()));
  Batch batch;
  for (const auto& f : frames) batch.features.push_back(&f);
  batch.targets = MatrixD::Zero(3, cfg.vocab);
  const GradientResult r = compute_gradients(cfg, params, batch);
  const MatrixD pre = hidden1_preactivations(cfg, params, batch);
  // The BN output has zero batch mean up to beta.
  for (int j = 0; j < cfg.hidden; ++j) {
    EXPECT_NEAR(pre.col(j).mean(), params.bn_beta(j), 1e-9);
  }
  const VectorD old_mean = params.bn_moving_mean;
  update_moving_statistics(params, r.batch_mean, r.batch_var);
  EXPECT_TRUE(params.bn_moving_mean.isApprox(kBatchNormMomentum * old_mean +
                                             (1 - kBatchNormMomentum) * r.batch_mean));
}

}  // namespace
}  // namespace gatedvlad
