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

#include "gatedvlad/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gatedvlad/errors.hpp"

namespace gatedvlad {

namespace {

void check_coefficients(const std::vector<double>& coefficients, bool allow_unnormalized) {
  if (coefficients.empty()) throw ValidationError("ensemble: no members");
  double sum = 0.0;
  for (double c : coefficients) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw ValidationError("ensemble: coefficients must be finite and non-negative");
    }
    sum += c;
  }
  if (!allow_unnormalized && std::abs(sum - 1.0) > kCoefficientSumTolerance) {
    throw ValidationError("ensemble: coefficients sum to " + std::to_string(sum) +
                          ", expected 1");
  }
}

EnsembleMember make_member(const Checkpoint& ckpt, double coefficient, std::string source) {
  CompressedWeights compressed = float16_compress(ckpt.weights, CompressionSelection{});
  EnsembleMember m{std::move(source),
                   coefficient,
                   compressed.weights,
                   GatedNetVlad(ckpt.config, compressed.weights),
                   size_report(compressed.weights),
                   compressed.report};
  return m;
}

}  // namespace

EnsembleModel::EnsembleModel(std::vector<EnsembleMember> members, std::uint64_t budget_bytes,
                             bool allow_unnormalized)
    : members_(std::move(members)),
      budget_bytes_(budget_bytes),
      allow_unnormalized_(allow_unnormalized) {
  check_coefficients(coefficients(), allow_unnormalized_);
  const ModelConfig& first = members_.front().model.config();
  for (const auto& m : members_) {
    const ModelConfig& c = m.model.config();
    if (c.vocab != first.vocab || c.d_video != first.d_video || c.d_audio != first.d_audio) {
      throw IncompatibleError("ensemble: member '" + m.source +
                              "' disagrees on vocabulary or feature dimensions");
    }
    total_bytes_ += bundle_size_bytes(m.stored);
  }
}

std::vector<double> EnsembleModel::coefficients() const {
  std::vector<double> out;
  for (const auto& m : members_) out.push_back(m.coefficient);
  return out;
}

void EnsembleModel::set_coefficients(const std::vector<double>& coefficients) {
  if (coefficients.size() != members_.size()) {
    throw ValidationError("ensemble: expected " + std::to_string(members_.size()) +
                          " coefficients");
  }
  check_coefficients(coefficients, allow_unnormalized_);
  for (std::size_t i = 0; i < members_.size(); ++i) members_[i].coefficient = coefficients[i];
}

EnsembleModel build_ensemble(const EnsembleSpec& spec) {
  if (spec.members.empty()) throw ValidationError("ensemble: no members");
  std::vector<double> coefficients;
  for (const auto& m : spec.members) coefficients.push_back(m.coefficient);
  check_coefficients(coefficients, spec.allow_unnormalized);

  std::vector<EnsembleMember> members;
  for (const auto& m : spec.members) {
    Checkpoint ckpt = Checkpoint::from_bundle(load_bundle(m.source));
    if (m.config && !(*m.config == ckpt.config)) {
      throw IncompatibleError("ensemble: config for '" + m.source.string() +
                              "' does not match the checkpoint");
    }
    members.push_back(make_member(ckpt, m.coefficient, m.source.string()));
  }
  return EnsembleModel(std::move(members), spec.budget_bytes, spec.allow_unnormalized);
}

EnsembleModel build_ensemble(const std::vector<Checkpoint>& checkpoints,
                             const std::vector<double>& coefficients,
                             std::uint64_t budget_bytes, bool allow_unnormalized) {
  if (checkpoints.size() != coefficients.size()) {
    throw ValidationError("ensemble: one coefficient per member required");
  }
  check_coefficients(coefficients, allow_unnormalized);
  std::vector<EnsembleMember> members;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    members.push_back(make_member(checkpoints[i], coefficients[i], "member" + std::to_string(i)));
  }
  return EnsembleModel(std::move(members), budget_bytes, allow_unnormalized);
}

VectorD ensemble_predict(const EnsembleModel& model, const FrameFeatures& features) {
  const auto& members = model.members();
  VectorD acc = VectorD::Zero(members.front().model.config().vocab);
  for (const auto& m : members) acc += m.coefficient * m.model.predict(features);
  if (model.allow_unnormalized()) acc = acc.cwiseMax(0.0).cwiseMin(1.0);
  return acc;
}

BudgetVerdict budget_check(std::uint64_t total_bytes, std::uint64_t budget_bytes) {
  return {total_bytes <= budget_bytes,
          static_cast<std::int64_t>(budget_bytes) - static_cast<std::int64_t>(total_bytes)};
}

BudgetVerdict budget_check(const EnsembleModel& model) {
  return budget_check(model.total_bytes(), model.budget_bytes());
}

std::vector<MatrixD> member_predictions(const EnsembleModel& model, const Dataset& data) {
  std::vector<MatrixD> out;
  const auto n = static_cast<Eigen::Index>(data.videos.size());
  for (const auto& m : model.members()) {
    MatrixD probs(n, m.model.config().vocab);
    for (Eigen::Index i = 0; i < n; ++i) {
      probs.row(i) = m.model.predict(data.videos[i].frames).transpose();
    }
    out.push_back(std::move(probs));
  }
  return out;
}

std::vector<std::vector<int>> simplex_lattice(int members, int divisions) {
  if (members < 1 || divisions < 1) throw ValidationError("lattice: sizes must be positive");
  std::vector<std::vector<int>> out;
  std::vector<int> point(members, 0);
  // Depth-first with the largest remaining count first gives descending
  // lexicographic order.
  auto recurse = [&](auto&& self, int index, int remaining) -> void {
    if (index == members - 1) {
      point[index] = remaining;
      out.push_back(point);
      return;
    }
    for (int c = remaining; c >= 0; --c) {
      point[index] = c;
      self(self, index + 1, remaining - c);
    }
  };
  recurse(recurse, 0, divisions);
  return out;
}

namespace {

// GAP over blended matrices without materializing string records. Produces
// the same ordering and accumulation as gap_at_k(top_k_predictions(...)).
class LatticeScorer {
 public:
  LatticeScorer(const Dataset& data, int k) : k_(k) {
    const std::size_t n = data.videos.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return data.videos[a].video_id < data.videos[b].video_id;
    });
    rank_.resize(n);
    for (std::size_t r = 0; r < n; ++r) rank_[order[r]] = static_cast<int>(r);
    positive_.assign(n, std::vector<char>(data.vocab, 0));
    for (std::size_t i = 0; i < n; ++i) {
      for (int l : data.videos[i].labels) positive_[i][l] = 1;
      positives_ += data.videos[i].labels.size();
    }
    if (positives_ == 0) throw InputError("gap: ground truth contains no positive labels");
  }

  GapResult score(const MatrixD& probs) const {
    struct Rec {
      double conf;
      int video_rank;
      int label;
      bool relevant;
    };
    std::vector<Rec> recs;
    const auto v = static_cast<int>(probs.cols());
    const auto keep = std::min(k_, v);
    recs.reserve(static_cast<std::size_t>(probs.rows()) * keep);
    std::vector<int> labels(v);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      std::iota(labels.begin(), labels.end(), 0);
      std::partial_sort(labels.begin(), labels.begin() + keep, labels.end(), [&](int a, int b) {
        if (probs(i, a) != probs(i, b)) return probs(i, a) > probs(i, b);
        return a < b;
      });
      for (int j = 0; j < keep; ++j) {
        const int l = labels[j];
        recs.push_back({probs(i, l), rank_[i], l, positive_[i][l] != 0});
      }
    }
    std::sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) {
      if (a.conf != b.conf) return a.conf > b.conf;
      if (a.video_rank != b.video_rank) return a.video_rank < b.video_rank;
      return a.label < b.label;
    });
    double gap = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (!recs[i].relevant) continue;
      ++hits;
      gap += (static_cast<double>(hits) / static_cast<double>(i + 1)) /
             static_cast<double>(positives_);
    }
    return {gap, recs.size(), positives_};
  }

 private:
  int k_;
  std::vector<int> rank_;
  std::vector<std::vector<char>> positive_;
  std::size_t positives_ = 0;
};

}  // namespace

TuneResult tune_coefficients(const std::vector<MatrixD>& member_probs, const Dataset& data,
                             double grid_step, int k) {
  if (data.videos.empty()) throw InputError("tune: validate dataset is empty");
  if (member_probs.size() < 2 || member_probs.size() > 7) {
    throw ValidationError("tune: between 2 and 7 members required");
  }
  if (!(grid_step > 0.0 && grid_step <= 1.0)) {
    throw ValidationError("tune: grid_step must lie in (0, 1]");
  }
  const double steps = 1.0 / grid_step;
  const int divisions = static_cast<int>(std::llround(steps));
  if (std::abs(steps - divisions) > 1e-9 * steps) {
    throw ValidationError("tune: grid_step must divide 1 evenly");
  }
  for (const auto& p : member_probs) {
    if (p.rows() != static_cast<Eigen::Index>(data.videos.size()) ||
        p.cols() != member_probs.front().cols()) {
      throw ShapeError("tune: member prediction matrices disagree in shape");
    }
  }

  const LatticeScorer scorer(data, k);
  const auto lattice = simplex_lattice(static_cast<int>(member_probs.size()), divisions);
  TuneResult best;
  bool have_best = false;
  MatrixD blend(member_probs.front().rows(), member_probs.front().cols());
  for (const auto& point : lattice) {
    blend.setZero();
    std::vector<double> coeffs(point.size());
    for (std::size_t m = 0; m < point.size(); ++m) {
      coeffs[m] = static_cast<double>(point[m]) / divisions;
      blend += coeffs[m] * member_probs[m];
    }
    const GapResult g = scorer.score(blend);
    if (!have_best || g.gap > best.gap.gap + 1e-12) {
      have_best = true;
      best.coefficients = coeffs;
      best.gap = g;
    }
  }
  best.lattice_points = lattice.size();
  return best;
}

TuneResult tune_coefficients(const EnsembleModel& model, const Dataset& validate,
                             double grid_step, int k) {
  if (validate.videos.empty()) throw InputError("tune: validate dataset is empty");
  return tune_coefficients(member_predictions(model, validate), validate, grid_step, k);
}

void write_manifest(const EnsembleModel& model, const std::filesystem::path& path) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : model.members()) {
    const auto rel = std::filesystem::proximate(m.source, dir).generic_string();
    members.push_back({{"path", rel},
                       {"coefficient", m.coefficient},
                       {"config", nlohmann::json::parse(m.model.config().to_json())},
                       {"stored_bytes", bundle_size_bytes(m.stored)},
                       {"original_bytes", m.compression.original_bytes},
                       {"cast_tensors", m.compression.cast_tensor_names}});
  }
  const auto verdict = budget_check(model);
  nlohmann::json j = {
      {"members", members},
      {"budget_bytes", model.budget_bytes()},
      {"total_bytes", model.total_bytes()},
      {"total_mb", static_cast<double>(model.total_bytes()) / kBytesPerMb},
      {"within_budget", verdict.pass},
      {"allow_unnormalized", model.allow_unnormalized()},
  };
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("failed writing manifest " + path.string());
}

EnsembleSpec read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  EnsembleSpec spec;
  try {
    spec.budget_bytes = j.value("budget_bytes", kDefaultBudgetBytes);
    spec.allow_unnormalized = j.value("allow_unnormalized", false);
    for (const auto& m : j.at("members")) {
      EnsembleMemberSpec member;
      std::filesystem::path p = m.at("path").get<std::string>();
      member.source = p.is_absolute() ? p : dir / p;
      member.coefficient = m.at("coefficient").get<double>();
      if (m.contains("config")) member.config = ModelConfig::from_json(m.at("config").dump());
      spec.members.push_back(std::move(member));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return spec;
}

std::vector<Table2Row> read_table2_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("table2 csv: empty input");
  std::vector<Table2Row> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw FormatError("table2 csv: expected at least 3 columns: " + line);
    try {
      rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2])});
    } catch (const std::exception&) {
      throw FormatError("table2 csv: malformed row: " + line);
    }
  }
  return rows;
}

std::vector<Table2Row> load_table2_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return read_table2_csv(in);
}

double member_half_size_sum_mb(const std::string& codes, const std::vector<Table1Row>& table1) {
  double sum = 0.0;
  for (char c : codes) {
    auto it = std::find_if(table1.begin(), table1.end(),
                           [&](const Table1Row& r) { return r.code == std::string(1, c); });
    if (it == table1.end()) {
      throw InputError(std::string("no reference model with code '") + c + "'");
    }
    sum += it->f16_mb;
  }
  return sum;
}

}  // namespace gatedvlad
