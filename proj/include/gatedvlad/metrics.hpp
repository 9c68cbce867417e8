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

#ifndef GATEDVLAD_METRICS_HPP_
#define GATEDVLAD_METRICS_HPP_

#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace gatedvlad {

struct PredictionRecord {
  std::string video_id;
  int label_id = 0;
  double confidence = 0.0;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct GapResult {
  double gap = 0.0;
  std::size_t pooled_count = 0;     // records scored
  std::size_t total_positives = 0;  // ground-truth labels over all videos
};

using GroundTruth = std::map<std::string, std::set<int>>;

inline constexpr int kDefaultTopK = 20;

// The k most confident labels, confidence descending, ties by ascending
// label. Returns min(k, V) records.
std::vector<PredictionRecord> top_k_predictions(std::span<const double> probs,
                                                const std::string& video_id,
                                                int k = kDefaultTopK);

// Global average precision over the pooled records. Records are sorted by
// confidence descending with ties broken by (video_id, label_id) ascending;
// recall is measured against every ground-truth label in `truth`.
//
// Throws InputError for records of unknown videos or when `truth` holds no
// labels at all.
GapResult gap_at_k(std::vector<PredictionRecord> records, const GroundTruth& truth);

// Kaggle-style submission: header "VideoId,LabelConfidencePairs", one row per
// video with space-separated "label confidence" pairs, confidence printed
// with six decimals. Videos appear in first-seen order; pairs keep their
// order within a video.
void write_predictions_csv(std::span<const PredictionRecord> records, std::ostream& out);
std::vector<PredictionRecord> read_predictions_csv(std::istream& in);

}  // namespace gatedvlad

#endif  // GATEDVLAD_METRICS_HPP_
