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
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "gatedvlad/datagen.hpp"
#include "gatedvlad/ensemble.hpp"
#include "gatedvlad/errors.hpp"
#include "gatedvlad/training.hpp"
#include "test_util.hpp"

namespace gatedvlad {
namespace {

Checkpoint random_member(int k, int h, std::uint64_t seed, int vocab = 6) {
  const ModelConfig cfg = ModelConfig::make(k, h, vocab, 5, 3);
  return {100, cfg, testing::random_weights(cfg, seed, 1.0)};
}

// Dummy off, one expert and a saturated output gate: the member predicts
// sigmoid(expert bias) for every input.
Checkpoint constant_member(const std::vector<double>& probs) {
  ModelConfig cfg = ModelConfig::make(1, 1, static_cast<int>(probs.size()), 2, 2);
  cfg.num_experts = 1;
  cfg.use_dummy_expert = false;
  TensorBundle w = zero_weights(cfg);
  std::vector<float> bias, out_bias(probs.size(), 40.0f);
  for (double p : probs) bias.push_back(static_cast<float>(std::log(p / (1 - p))));
  w.put(Tensor(names::kExpertsBias, {static_cast<std::int64_t>(probs.size())}, bias));
  w.put(Tensor(names::kOutputGateBias, {static_cast<std::int64_t>(probs.size())}, out_bias));
  return {1, cfg, w};
}

TEST(Ensemble, SingleMemberMatchesCompressedModel) {
  const Checkpoint c = random_member(2, 3, 1);
  const EnsembleModel m = build_ensemble({c}, {1.0});
  const TensorBundle compressed = float16_compress(c.weights).weights;
  for (int i = 0; i < 5; ++i) {
    const auto f = testing::random_features(c.config, 3, 10 + i);
    EXPECT_TRUE(ensemble_predict(m, f).isApprox(forward(c.config, compressed, f), 0.0));
  }
}

TEST(Ensemble, IdenticalMembersMatchOneMember) {
  const Checkpoint c = random_member(2, 3, 2);
  const EnsembleModel single = build_ensemble({c}, {1.0});
  const EnsembleModel pair = build_ensemble({c, c}, {0.3, 0.7});
  const auto f = testing::random_features(c.config, 4, 3);
  const VectorD a = ensemble_predict(single, f), b = ensemble_predict(pair, f);
  for (int v = 0; v < a.size(); ++v) EXPECT_NEAR(a(v), b(v), 1e-15);
}

TEST(Ensemble, FourMembersMatchIndependentForwardPasses) {
  const std::vector<Checkpoint> members = {random_member(2, 3, 4), random_member(1, 5, 5),
                                           random_member(3, 2, 6), random_member(2, 4, 7)};
  const std::vector<double> coeffs = {0.39, 0.26, 0.21, 0.14};
  const EnsembleModel m = build_ensemble(members, coeffs);
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = testing::random_features(members[0].config, 2 + trial, 20 + trial);
    std::vector<double> expected(6, 0.0);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto p = testing::oracle_forward(members[i].config,
                                             float16_compress(members[i].weights).weights, f);
      for (int v = 0; v < 6; ++v) expected[v] += coeffs[i] * p[v];
    }
    const VectorD got = ensemble_predict(m, f);
    for (int v = 0; v < 6; ++v) EXPECT_NEAR(got(v), expected[v], 1e-7);
  }
}

TEST(Ensemble, TwoClassArithmeticExample) {
  const EnsembleModel m =
      build_ensemble({constant_member({0.2, 0.8}), constant_member({0.6, 0.4})}, {0.25, 0.75});
  const auto f = testing::random_features(m.members()[0].model.config(), 3, 1);
  const VectorD p = ensemble_predict(m, f);
  EXPECT_NEAR(p(0), 0.5, 1e-7);
  EXPECT_NEAR(p(1), 0.5, 1e-7);
}

TEST(Ensemble, AllWeightOnFirstMember) {
  const std::vector<Checkpoint> members = {random_member(2, 3, 8), random_member(2, 3, 9),
                                           random_member(2, 3, 10)};
  const EnsembleModel m = build_ensemble(members, {1.0, 0.0, 0.0});
  const auto f = testing::random_features(members[0].config, 3, 11);
  EXPECT_TRUE(ensemble_predict(m, f).isApprox(m.members()[0].model.predict(f), 0.0));
}

TEST(Ensemble, LinearInCoefficients) {
  const std::vector<Checkpoint> members = {random_member(2, 3, 12), random_member(1, 2, 13),
                                           random_member(3, 3, 14)};
  EnsembleModel m = build_ensemble(members, {1.0, 0.0, 0.0});
  const auto f = testing::random_features(members[0].config, 3, 15);
  const std::vector<double> a = {0.5, 0.3, 0.2}, b = {0.1, 0.1, 0.8};
  m.set_coefficients(a);
  const VectorD pa = ensemble_predict(m, f);
  m.set_coefficients(b);
  const VectorD pb = ensemble_predict(m, f);
  m.set_coefficients({0.25 * a[0] + 0.75 * b[0], 0.25 * a[1] + 0.75 * b[1],
                      0.25 * a[2] + 0.75 * b[2]});
  const VectorD mixed = ensemble_predict(m, f);
  EXPECT_LE((mixed - (0.25 * pa + 0.75 * pb)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ensemble, StoredWeightsAreHalfForBigFourOnly) {
  const EnsembleModel m = build_ensemble({random_member(2, 3, 16), random_member(3, 2, 17)},
                                         {0.5, 0.5});
  std::uint64_t total = 0;
  for (const auto& member : m.members()) {
    total += bundle_size_bytes(member.stored);
    for (const auto& [name, t] : member.stored.entries()) {
      const auto& big = names::big_four();
      const bool is_big = std::find(big.begin(), big.end(), name) != big.end();
      EXPECT_EQ(t.precision(), is_big ? Precision::kHalf : Precision::kSingle);
    }
  }
  EXPECT_EQ(m.total_bytes(), total);
}

TEST(Ensemble, CoefficientRulesAreEnforced) {
  const Checkpoint c = random_member(2, 3, 18);
  EXPECT_THROW(build_ensemble({c, c}, {0.5, 0.4}), ValidationError);
  EXPECT_THROW(build_ensemble({c, c}, {1.2, -0.2}), ValidationError);
  EXPECT_NO_THROW(build_ensemble({c, c}, {0.5, 0.5 + 5e-7}));
  const EnsembleModel loose = build_ensemble({c, c}, {0.9, 0.9}, kDefaultBudgetBytes, true);
  const VectorD p = ensemble_predict(loose, testing::random_features(c.config, 2, 1));
  EXPECT_LE(p.maxCoeff(), 1.0);
  EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Ensemble, MismatchedVocabularyIsIncompatible) {
  EXPECT_THROW(build_ensemble({random_member(2, 3, 19, 6), random_member(2, 3, 20, 7)},
                              {0.5, 0.5}),
               IncompatibleError);
}

TEST(Budget, Examples) {
  const EnsembleModel tiny = build_ensemble({random_member(1, 1, 21)}, {1.0});
  const BudgetVerdict ok = budget_check(tiny);
  EXPECT_TRUE(ok.pass);
  EXPECT_EQ(ok.headroom_bytes, static_cast<std::int64_t>(kDefaultBudgetBytes - tiny.total_bytes()));

  const EnsembleModel strict = build_ensemble({random_member(1, 1, 21)}, {1.0}, 1);
  EXPECT_FALSE(budget_check(strict).pass);
  EXPECT_LT(budget_check(strict).headroom_bytes, 0);

  EXPECT_TRUE(budget_check(kDefaultBudgetBytes, kDefaultBudgetBytes).pass);
  EXPECT_FALSE(budget_check(kDefaultBudgetBytes + 1, kDefaultBudgetBytes).pass);
}

TEST(Budget, FourModelReferenceEnsembleFitsUnderBudget) {
  const auto table1 = load_table1_csv(std::string(GATEDVLAD_DATA_DIR) + "/table1.csv");
  const double mb = member_half_size_sum_mb("YHLS", table1);
  EXPECT_NEAR(mb, 381.40 + 286.85 + 199.61 + 151.85, 1e-9);
  const auto bytes = static_cast<std::uint64_t>(std::llround(mb * kBytesPerMb));
  EXPECT_TRUE(budget_check(bytes, kDefaultBudgetBytes).pass);
  EXPECT_THROW(member_half_size_sum_mb("YB", table1), InputError);
}

// ---------------------------------------------------------------------------

TEST(Lattice, EnumerationOrder) {
  EXPECT_EQ(simplex_lattice(2, 2), (std::vector<std::vector<int>>{{2, 0}, {1, 1}, {0, 2}}));
  const auto l = simplex_lattice(3, 4);
  EXPECT_EQ(l.size(), 15u);
  EXPECT_TRUE(std::is_sorted(l.rbegin(), l.rend()));
}

Dataset small_planted(int videos, std::uint64_t seed) {
  SyntheticDatasetConfig cfg;
  cfg.num_videos = videos;
  cfg.vocab = 10;
  cfg.d_video = 4;
  cfg.d_audio = 2;
  cfg.max_frames = 4;
  cfg.mean_labels_per_video = 2.0;
  cfg.seed = seed;
  return generate(cfg);
}

MatrixD noise_predictions(std::mt19937_64& rng, std::size_t videos, int vocab) {
  MatrixD m(static_cast<Eigen::Index>(videos), vocab);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = testing::unit_uniform(rng);
  return m;
}

TEST(Tune, HalfStepSearchesThreePoints) {
  const Dataset d = small_planted(20, 1);
  std::mt19937_64 rng(1);
  const std::vector<MatrixD> probs = {noise_predictions(rng, 20, 10),
                                      noise_predictions(rng, 20, 10)};
  const TuneResult r = tune_coefficients(probs, d, 0.5);
  EXPECT_EQ(r.lattice_points, 3u);
  // The reported optimum is one of the three expected points.
  const std::vector<std::vector<double>> allowed = {{1, 0}, {0.5, 0.5}, {0, 1}};
  EXPECT_NE(std::find(allowed.begin(), allowed.end(), r.coefficients), allowed.end());
}

TEST(Tune, IdenticalMembersTieToFirst) {
  const Dataset d = small_planted(20, 2);
  std::mt19937_64 rng(2);
  const MatrixD p = noise_predictions(rng, 20, 10);
  const TuneResult r = tune_coefficients({p, p}, d, 0.01);
  EXPECT_EQ(r.coefficients, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(r.lattice_points, 101u);
}

GapResult oracle_blend_gap(const std::vector<MatrixD>& probs, const std::vector<double>& c,
                           const Dataset& d, int k) {
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < d.videos.size(); ++i) {
    std::vector<double> blend(d.vocab, 0.0);
    for (std::size_t m = 0; m < probs.size(); ++m) {
      for (int v = 0; v < d.vocab; ++v) blend[v] += c[m] * probs[m](static_cast<Eigen::Index>(i), v);
    }
    const auto top = top_k_predictions(blend, d.videos[i].video_id, k);
    records.insert(records.end(), top.begin(), top.end());
  }
  return gap_at_k(records, d.ground_truth());
}

TEST(Tune, DominantMemberWinsAndMatchesFullEnumeration) {
  const Dataset d = small_planted(60, 3);
  std::mt19937_64 rng(3);
  MatrixD good = 0.3 * noise_predictions(rng, 60, 10);
  for (std::size_t i = 0; i < d.videos.size(); ++i) {
    for (int l : d.videos[i].labels) good(static_cast<Eigen::Index>(i), l) += 0.7;
  }
  const std::vector<MatrixD> probs = {good, noise_predictions(rng, 60, 10),
                                      noise_predictions(rng, 60, 10)};
  const TuneResult r = tune_coefficients(probs, d, 0.1, 10);

  double best = -1.0;
  std::vector<double> argmax;
  for (const auto& point : simplex_lattice(3, 10)) {
    std::vector<double> c;
    for (int p : point) c.push_back(p / 10.0);
    const double g = oracle_blend_gap(probs, c, d, 10).gap;
    if (g > best + 1e-12) {
      best = g;
      argmax = c;
    }
  }
  EXPECT_EQ(r.coefficients, argmax);
  EXPECT_NEAR(r.gap.gap, best, 1e-12);
  EXPECT_EQ(r.coefficients[0], 1.0);
  EXPECT_NEAR(r.gap.gap, 1.0, 1e-12);
}

TEST(Tune, ArgumentChecks) {
  const Dataset d = small_planted(10, 4);
  std::mt19937_64 rng(4);
  const MatrixD p = noise_predictions(rng, 10, 10);
  EXPECT_THROW(tune_coefficients({p}, d, 0.1), ValidationError);
  EXPECT_THROW(tune_coefficients(std::vector<MatrixD>(8, p), d, 0.5), ValidationError);
  EXPECT_THROW(tune_coefficients({p, p}, d, 0.3), ValidationError);
  Dataset empty = d;
  empty.videos.clear();
  EXPECT_THROW(tune_coefficients({p, p}, empty, 0.5), InputError);
}

TEST(Tune, ModelOverloadUsesMemberPredictions) {
  const Dataset d = small_planted(15, 5);
  ModelConfig cfg = ModelConfig::make(2, 3, 10, 4, 2);
  const std::vector<Checkpoint> members = {{1, cfg, testing::random_weights(cfg, 1)},
                                           {1, cfg, testing::random_weights(cfg, 2)}};
  const EnsembleModel m = build_ensemble(members, {0.5, 0.5});
  const TuneResult a = tune_coefficients(m, d, 0.25);
  const TuneResult b = tune_coefficients(member_predictions(m, d), d, 0.25);
  EXPECT_EQ(a.coefficients, b.coefficients);
  EXPECT_EQ(a.gap.gap, b.gap.gap);
  EXPECT_NEAR(a.gap.gap, oracle_blend_gap(member_predictions(m, d), a.coefficients, d, 20).gap,
              1e-12);
}

// ---------------------------------------------------------------------------

TEST(Manifest, RoundTripThroughFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "gatedvlad_manifest_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "runs");
  const std::vector<Checkpoint> members = {random_member(2, 3, 30), random_member(1, 4, 31)};
  EnsembleSpec spec;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto path = dir / "runs" / ("m" + std::to_string(i) + ".tb");
    save_bundle(members[i].to_bundle(), path);
    spec.members.push_back({path, i == 0 ? 0.7 : 0.3, members[i].config});
  }
  const EnsembleModel built = build_ensemble(spec);
  write_manifest(built, dir / "ensemble.json");
  const EnsembleSpec back = read_manifest(dir / "ensemble.json");
  ASSERT_EQ(back.members.size(), 2u);
  EXPECT_EQ(back.members[0].coefficient, 0.7);
  EXPECT_EQ(back.budget_bytes, kDefaultBudgetBytes);
  EXPECT_EQ(std::filesystem::canonical(back.members[1].source),
            std::filesystem::canonical(spec.members[1].source));
  const EnsembleModel rebuilt = build_ensemble(back);
  EXPECT_EQ(rebuilt.total_bytes(), built.total_bytes());
  const auto f = testing::random_features(members[0].config, 3, 32);
  EXPECT_TRUE(ensemble_predict(rebuilt, f).isApprox(ensemble_predict(built, f), 0.0));

  EnsembleSpec wrong = spec;
  wrong.members[0].config = members[1].config;
  EXPECT_THROW(build_ensemble(wrong), IncompatibleError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace gatedvlad
