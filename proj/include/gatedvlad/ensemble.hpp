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

#ifndef GATEDVLAD_ENSEMBLE_HPP_
#define GATEDVLAD_ENSEMBLE_HPP_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "gatedvlad/datagen.hpp"
#include "gatedvlad/metrics.hpp"
#include "gatedvlad/model.hpp"
#include "gatedvlad/sizing.hpp"
#include "gatedvlad/training.hpp"

namespace gatedvlad {

inline constexpr std::uint64_t kDefaultBudgetBytes = std::uint64_t{1} << 30;
inline constexpr double kCoefficientSumTolerance = 1e-6;

struct EnsembleMemberSpec {
  std::filesystem::path source;  // single-precision checkpoint (.tb)
  double coefficient = 0.0;
  // When set, must match the config recorded in the checkpoint.
  std::optional<ModelConfig> config;
};

struct EnsembleSpec {
  std::vector<EnsembleMemberSpec> members;
  std::uint64_t budget_bytes = kDefaultBudgetBytes;
  // Permits coefficient vectors that do not sum to one; predictions are then
  // clipped to [0, 1].
  bool allow_unnormalized = false;
};

struct EnsembleMember {
  std::string source;
  double coefficient = 0.0;
  TensorBundle stored;  // big-4 at half precision
  GatedNetVlad model;
  SizeReport size;
  CompressionReport compression;
};

// Several single models evaluated side by side and blended with fixed
// coefficients. Weights are stored compressed and widened for arithmetic.
class EnsembleModel {
 public:
  EnsembleModel(std::vector<EnsembleMember> members, std::uint64_t budget_bytes,
                bool allow_unnormalized);

  const std::vector<EnsembleMember>& members() const { return members_; }
  std::vector<double> coefficients() const;
  // Throws ValidationError under the same rules as construction.
  void set_coefficients(const std::vector<double>& coefficients);

  std::uint64_t total_bytes() const { return total_bytes_; }
  std::uint64_t budget_bytes() const { return budget_bytes_; }
  bool allow_unnormalized() const { return allow_unnormalized_; }

 private:
  std::vector<EnsembleMember> members_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t budget_bytes_ = kDefaultBudgetBytes;
  bool allow_unnormalized_ = false;
};

// Throws ValidationError for negative or non-normalized coefficients and
// IncompatibleError when members disagree on vocabulary or feature widths.
EnsembleModel build_ensemble(const EnsembleSpec& spec);
// In-memory variant over trained checkpoints.
EnsembleModel build_ensemble(const std::vector<Checkpoint>& members,
                             const std::vector<double>& coefficients,
                             std::uint64_t budget_bytes = kDefaultBudgetBytes,
                             bool allow_unnormalized = false);

// sum_i c_i * forward(member_i, features), accumulated in member order.
VectorD ensemble_predict(const EnsembleModel& model, const FrameFeatures& features);

struct BudgetVerdict {
  bool pass = false;
  std::int64_t headroom_bytes = 0;
};

BudgetVerdict budget_check(const EnsembleModel& model);
BudgetVerdict budget_check(std::uint64_t total_bytes, std::uint64_t budget_bytes);

// Per-member probability matrices (videos x V) over one dataset.
std::vector<MatrixD> member_predictions(const EnsembleModel& model, const Dataset& data);

// Points of the simplex lattice with `divisions` steps, as integer counts,
// in lexicographically descending order.
std::vector<std::vector<int>> simplex_lattice(int members, int divisions);

struct TuneResult {
  std::vector<double> coefficients;
  GapResult gap;
  std::size_t lattice_points = 0;
};

// Exhaustive lattice search for the blend maximizing GAP@k. Earlier
// (lexicographically larger) lattice points win ties.
TuneResult tune_coefficients(const std::vector<MatrixD>& member_probs, const Dataset& data,
                             double grid_step, int k = kDefaultTopK);
TuneResult tune_coefficients(const EnsembleModel& model, const Dataset& validate,
                             double grid_step, int k = kDefaultTopK);

// Manifest JSON: member paths (relative to the manifest directory),
// coefficients, configs, recorded sizes and the budget.
void write_manifest(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleSpec read_manifest(const std::filesystem::path& path);

struct Table2Row {
  std::string ensemble;  // concatenated single-model codes, e.g. "YHLS"
  double size_mb = 0.0;
  double local_gap = 0.0;
};

std::vector<Table2Row> read_table2_csv(std::istream& in);
std::vector<Table2Row> load_table2_csv(const std::filesystem::path& path);

// Sum of the reference half-precision sizes of each letter in `codes`.
// Throws InputError for letters absent from `table1`.
double member_half_size_sum_mb(const std::string& codes, const std::vector<Table1Row>& table1);

}  // namespace gatedvlad

#endif  // GATEDVLAD_ENSEMBLE_HPP_
