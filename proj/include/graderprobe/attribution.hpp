/*
 * Copyright 2026 The GraderProbe Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Integrated Gradients over a ScoringModel.
//
// For an embedded essay x (n x d) and the all-zero baseline b, token i
// receives
//
//   a_i = sum_c (x_ic - b_ic) * (1/m) sum_k dF/dx_ic (b + alpha_k (x - b))
//
// with alpha_k = k/m (left Riemann) or (k + 1/2)/m (midpoint), k = 0..m-1.
// By completeness, sum_i a_i approximates F(x) - F(b); the relative gap is
// stored on the record.

#ifndef GRADERPROBE_ATTRIBUTION_HPP_
#define GRADERPROBE_ATTRIBUTION_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "graderprobe/corpus.hpp"
#include "graderprobe/model.hpp"
#include "json.hpp"

namespace graderprobe {

enum class QuadratureRule { kLeftRiemann, kMidpoint };

std::string ToString(QuadratureRule r);
QuadratureRule ParseQuadratureRule(const std::string& s);

struct IGConfig {
  std::size_t steps = 50;
  QuadratureRule rule = QuadratureRule::kLeftRiemann;
  // Path points evaluated per batch. Batches are summed in a fixed order, so
  // results do not depend on this value or on `workers`.
  std::size_t batch_size = 32;
  int workers = 1;
};

inline constexpr double kCompletenessEpsilon = 1e-9;

struct AttributionRecord {
  std::int64_t essay_id = 0;
  std::vector<std::string> tokens;
  std::vector<double> attributions;
  double score = 0.0;
  double baseline_score = 0.0;
  double completeness_error = 0.0;

  double Sum() const;
};

// |sum - (score - baseline)| / max(|score - baseline|, eps)
double CompletenessError(double attribution_sum, double score,
                         double baseline_score);

AttributionRecord IntegratedGradients(const ScoringModel& model,
                                      std::span<const std::string> tokens,
                                      const IGConfig& config,
                                      std::int64_t essay_id = 0);
AttributionRecord IntegratedGradients(const ScoringModel& model,
                                      const Essay& essay, const IGConfig& config);

std::vector<AttributionRecord> AttributeCorpus(const ScoringModel& model,
                                               const Corpus& corpus,
                                               const IGConfig& config);

struct CompletenessResult {
  bool pass = false;
  double error = 0.0;
};

CompletenessResult CompletenessCheck(const AttributionRecord& record,
                                     double tolerance);

struct TokenAttribution {
  std::string token;
  double mean = 0.0;
  std::size_t occurrences = 0;
};

struct AttributionReport {
  std::vector<TokenAttribution> top_positive;
  std::vector<TokenAttribution> top_negative;
  // |mean| at or below the 10th percentile of all |mean| values.
  std::vector<TokenAttribution> unattributed;
};

// Aggregates attributions by token identity (mean over occurrences). Ties
// are broken by the order in which tokens first appear in `records`.
AttributionReport BuildAttributionReport(std::span<const AttributionRecord> records,
                                         std::size_t k);

nlohmann::json RecordToJson(const AttributionRecord& r);
AttributionRecord RecordFromJson(const nlohmann::json& j);
void WriteRecordsJsonl(std::span<const AttributionRecord> records,
                       const std::filesystem::path& path);
std::vector<AttributionRecord> ReadRecordsJsonl(const std::filesystem::path& path);

nlohmann::json ReportToJson(const AttributionReport& report);

}  // namespace graderprobe

#endif  // GRADERPROBE_ATTRIBUTION_HPP_
