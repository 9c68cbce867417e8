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

#include "gatedvlad/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "gatedvlad/errors.hpp"

namespace gatedvlad {

std::vector<PredictionRecord> top_k_predictions(std::span<const double> probs,
                                                const std::string& video_id, int k) {
  if (k < 1) throw ValidationError("top_k: k must be >= 1");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), probs.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                    order.end(), [&](int a, int b) {
                      if (probs[a] != probs[b]) return probs[a] > probs[b];
                      return a < b;
                    });
  std::vector<PredictionRecord> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.push_back({video_id, order[i], probs[order[i]]});
  }
  return out;
}

GapResult gap_at_k(std::vector<PredictionRecord> records, const GroundTruth& truth) {
  std::size_t positives = 0;
  for (const auto& [_, labels] : truth) positives += labels.size();
  if (positives == 0) throw InputError("gap: ground truth contains no positive labels");

  for (const auto& r : records) {
    if (!truth.contains(r.video_id)) {
      throw InputError("gap: no ground truth for video '" + r.video_id + "'");
    }
  }
  std::sort(records.begin(), records.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) {
              if (a.confidence != b.confidence) return a.confidence > b.confidence;
              if (a.video_id != b.video_id) return a.video_id < b.video_id;
              return a.label_id < b.label_id;
            });

  double gap = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& labels = truth.at(records[i].video_id);
    if (!labels.contains(records[i].label_id)) continue;
    ++hits;
    gap += (static_cast<double>(hits) / static_cast<double>(i + 1)) /
           static_cast<double>(positives);
  }
  return {gap, records.size(), positives};
}

void write_predictions_csv(std::span<const PredictionRecord> records, std::ostream& out) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const PredictionRecord*>> rows;
  for (const auto& r : records) {
    auto [it, inserted] = rows.try_emplace(r.video_id);
    if (inserted) order.push_back(r.video_id);
    it->second.push_back(&r);
  }
  out << "VideoId,LabelConfidencePairs\n";
  char buf[64];
  for (const auto& id : order) {
    out << id << ',';
    bool first = true;
    for (const auto* r : rows[id]) {
      std::snprintf(buf, sizeof(buf), "%d %.6f", r->label_id, r->confidence);
      if (!first) out << ' ';
      out << buf;
      first = false;
    }
    out << '\n';
  }
}

std::vector<PredictionRecord> read_predictions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("VideoId,LabelConfidencePairs", 0) != 0) {
    throw FormatError("predictions csv: missing header");
  }
  std::vector<PredictionRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("predictions csv: row without comma");
    const std::string id = line.substr(0, comma);
    std::istringstream pairs(line.substr(comma + 1));
    int label;
    double conf;
    while (pairs >> label) {
      if (!(pairs >> conf)) throw FormatError("predictions csv: dangling label in row " + id);
      out.push_back({id, label, conf});
    }
    if (!pairs.eof()) throw FormatError("predictions csv: malformed pair in row " + id);
  }
  return out;
}

}  // namespace gatedvlad
