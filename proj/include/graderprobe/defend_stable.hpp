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

// Overstability detector: n-gram perplexity features scored by an
// Isolation Forest fitted on clean essays.
//
// Isolation Forest score of a point x against subsample size n:
//
//   s(x, n) = 2^(-E(h(x)) / c(n)),   c(n) = 2 H(n - 1) - 2 (n - 1) / n,
//   H(i) = ln(i) + 0.5772
//
// c(n) = 0 for n < 2.

#ifndef GRADERPROBE_DEFEND_STABLE_HPP_
#define GRADERPROBE_DEFEND_STABLE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "graderprobe/common.hpp"
#include "graderprobe/corpus.hpp"
#include "json.hpp"

namespace graderprobe {

// Add-k smoothed n-gram model. Essays are padded on the left with n-1
// boundary markers; tokens outside the training vocabulary are read as UNK,
// which is itself a vocabulary type.
class NgramLM {
 public:
  static NgramLM Train(std::span<const std::vector<std::string>> texts,
                       std::size_t order, double smoothing);
  static NgramLM Train(const Corpus& corpus, std::size_t order, double smoothing);

  std::size_t order() const { return order_; }
  double smoothing() const { return smoothing_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  // p(token | context); only the last order-1 context tokens are used and
  // shorter contexts are left-padded.
  double Prob(std::span<const std::string> context, const std::string& token) const;

  // exp(-(1/T) sum_t ln p(x_t | x_{t-n+1..t-1})).
  double Perplexity(std::span<const std::string> tokens) const;

  nlohmann::json ToJson() const;
  static NgramLM FromJson(const nlohmann::json& j);

 private:
  std::string Canonical(const std::string& token) const;
  std::string ContextKey(std::span<const std::string> context) const;

  std::size_t order_ = 3;
  double smoothing_ = 0.1;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> vocab_index_;
  std::unordered_map<std::string, double> context_totals_;
  std::unordered_map<std::string, double> ngram_counts_;  // context \x1f token
};

inline constexpr double kEulerApprox = 0.5772;

double CFactor(std::size_t n);

struct IsoNode {
  int feature = -1;  // -1 marks an external node
  double split = 0.0;
  int left = -1;
  int right = -1;
  std::size_t size = 0;
};

struct IsoTree {
  std::vector<IsoNode> nodes;  // node 0 is the root

  std::size_t Height() const;
  // Edges to the external node plus c(size) of that node.
  double PathLength(std::span<const double> point) const;
};

// Grows one tree on `points` (rows), to at most `height_limit`.
IsoTree BuildIsoTree(const Matrix& points, std::size_t height_limit, Rng& rng);

struct IsoForestOptions {
  std::size_t trees = 100;
  std::size_t subsample = 256;  // clipped to the number of points
  double contamination = 0.01;
  std::uint64_t seed = 1;
  int workers = 1;
};

class IsoForest {
 public:
  static IsoForest Fit(const Matrix& points, const IsoForestOptions& options);

  double MeanPathLength(std::span<const double> point) const;
  double Score(std::span<const double> point) const;
  double threshold() const { return threshold_; }
  double contamination() const { return contamination_; }
  std::size_t subsample() const { return subsample_; }
  const std::vector<IsoTree>& trees() const { return trees_; }

  nlohmann::json ToJson() const;
  static IsoForest FromJson(const nlohmann::json& j);

 private:
  std::vector<IsoTree> trees_;
  std::size_t subsample_ = 0;
  std::size_t dim_ = 0;
  double contamination_ = 0.01;
  double threshold_ = 0.0;
};

// s for a given expected path length.
double IsoScore(double expected_path_length, std::size_t subsample);

struct FeatureOptions {
  bool oov_rate = false;
  bool mean_sentence_length = false;
};

std::vector<double> StableFeatures(const NgramLM& lm, const Essay& essay,
                                   const FeatureOptions& options);

struct OverstableOptions {
  std::size_t order = 3;
  double smoothing = 0.1;
  // Folds used to compute out-of-sample training perplexities for the
  // forest; 1 scores the training essays with the full model.
  std::size_t folds = 5;
  FeatureOptions features;
  IsoForestOptions forest;
};

struct OverstableDetector {
  NgramLM lm;
  IsoForest forest;
  FeatureOptions features;

  nlohmann::json ToJson() const;
  static OverstableDetector FromJson(const nlohmann::json& j);
  void Save(const std::filesystem::path& path) const;
  static OverstableDetector Load(const std::filesystem::path& path);
};

OverstableDetector FitOverstableDetector(const Corpus& train,
                                         const OverstableOptions& options);

struct OverstableVerdict {
  std::int64_t essay_id = 0;
  bool flag = false;
  double perplexity = 0.0;
  double score = 0.0;
};

OverstableVerdict DetectOverstable(const OverstableDetector& detector,
                                   const Essay& essay);

nlohmann::json VerdictToJson(const OverstableVerdict& v);

}  // namespace graderprobe

#endif  // GRADERPROBE_DEFEND_STABLE_HPP_
