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

// Oversensitivity detector: a two-layer recurrent classifier over per-token
// attribution sequences that flags trigger-bearing essays.
//
// Inputs x_t are the essay's attributions z-scored within the essay
// (optionally alongside the raw values). Two stacked GatedCells produce
// h_t; the readout r (final state or mean of states) feeds
// y = sigmoid(w . r + b).

#ifndef GRADERPROBE_DEFEND_SENSITIVE_HPP_
#define GRADERPROBE_DEFEND_SENSITIVE_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "graderprobe/attribution.hpp"
#include "graderprobe/corpus.hpp"
#include "graderprobe/gated_cell.hpp"
#include "graderprobe/model.hpp"
#include "graderprobe/trigger.hpp"
#include "json.hpp"

namespace graderprobe {

enum class Readout { kLast, kMean };

std::string ToString(Readout r);
Readout ParseReadout(const std::string& s);

struct DetectorConfig {
  std::size_t hidden_dim = 8;
  bool raw_feature = true;  // feed raw attributions next to z-scores
  Readout readout = Readout::kMean;
  // Read the sequence right to left, so prepended tokens are seen last.
  bool reverse = false;
  double init_scale = 0.3;
  std::uint64_t seed = 1;
};

// T x (1 or 2) input features for one attribution sequence.
Matrix DetectorFeatures(std::span<const double> attributions, bool raw_feature);

class DetectorModel {
 public:
  explicit DetectorModel(DetectorConfig config);

  const DetectorConfig& config() const { return config_; }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }

  // y in (0, 1). Throws on an empty sequence.
  double Predict(std::span<const double> attributions) const;

  // Weighted binary cross-entropy of one sequence; adds dLoss/dparams into
  // `grad` (same layout as params()).
  double LossAndGradient(std::span<const double> attributions, int label,
                         double weight, std::span<double> grad) const;
  double Loss(std::span<const double> attributions, int label, double weight) const;

  nlohmann::json ToJson() const;
  static DetectorModel FromJson(const nlohmann::json& j);
  void Save(const std::filesystem::path& path) const;
  static DetectorModel Load(const std::filesystem::path& path);

 private:
  Matrix Inputs(std::span<const double> attributions) const;
  double Logit(std::span<const double> attributions) const;
  std::size_t input_dim() const { return config_.raw_feature ? 2 : 1; }

  DetectorConfig config_;
  GatedCell layer1_;
  GatedCell layer2_;
  std::vector<double> params_;  // layer1, layer2, w (H), b
};

struct LabeledSequence {
  std::int64_t essay_id = 0;
  std::vector<std::string> trigger;  // empty for clean essays
  std::vector<std::string> tokens;
  std::vector<double> attributions;
  int label = 0;
};

using TriggerSet = std::vector<std::vector<std::string>>;

struct DetectorDataset {
  std::vector<LabeledSequence> train;
  std::vector<LabeledSequence> test;
  TriggerSet train_triggers;
  TriggerSet test_triggers;
};

// Splits `corpus` into train and test essays (seeded). Every train essay
// yields its clean sequence plus one sequence per train trigger; every test
// essay yields its clean sequence plus one sequence with a test trigger
// (cycled), so the test set is balanced. Throws if the trigger sets share a
// sequence or either is empty.
DetectorDataset BuildDetectorDataset(const Corpus& corpus, const ScoringModel& model,
                                     const TriggerSet& train_triggers,
                                     const TriggerSet& test_triggers,
                                     const IGConfig& ig, double test_fraction,
                                     std::uint64_t seed);

struct TriggerBankOptions {
  std::size_t per_split = 8;  // triggers per side
  std::size_t length = 3;
  // Most harmful single tokens considered, split alternately between sides
  // so train and test triggers share no token.
  std::size_t pool = 40;
  Direction direction = Direction::kIncrease;
  std::uint64_t seed = 1;
  int workers = 1;
};

// Train and test trigger sets built from the most harmful single tokens.
std::pair<TriggerSet, TriggerSet> BuildTriggerBank(const ScoringModel& model,
                                                   const Corpus& corpus,
                                                   const TriggerBankOptions& options);

struct DetectorTrainOptions {
  std::size_t epochs = 60;
  double learning_rate = 0.01;  // Adam step
  std::size_t batch_size = 32;
  double clip_norm = 5.0;
  bool class_balanced = true;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct DetectorTrainResult {
  DetectorModel model;
  std::vector<double> loss_history;  // entry 0 before training
};

DetectorTrainResult TrainDetector(const std::vector<LabeledSequence>& data,
                                  const DetectorConfig& config,
                                  const DetectorTrainOptions& options);

struct OversensitiveVerdict {
  bool flag = false;
  double confidence = 0.0;
};

OversensitiveVerdict DetectOversensitive(const DetectorModel& detector,
                                         std::span<const double> attributions,
                                         double threshold = 0.5);

struct RocPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct BinaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::vector<RocPoint> roc;
};

// Precision, recall and F1 are 0 when their denominators are 0.
BinaryMetrics MetricsFromCounts(std::size_t tp, std::size_t fp, std::size_t fn,
                                std::size_t tn);
BinaryMetrics MetricsFromScores(std::span<const double> scores,
                                std::span<const int> labels, double threshold = 0.5);

BinaryMetrics DetectorMetrics(const DetectorModel& detector,
                              const std::vector<LabeledSequence>& test,
                              double threshold = 0.5, int workers = 1);

nlohmann::json MetricsToJson(const BinaryMetrics& m);

// Logistic regression on token presence, no attributions.
class TokenBaseline {
 public:
  static TokenBaseline Train(const std::vector<LabeledSequence>& data,
                             const DetectorTrainOptions& options);
  double Predict(std::span<const std::string> tokens) const;

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> weights_;
  double bias_ = 0.0;
};

BinaryMetrics BaselineMetrics(const TokenBaseline& baseline,
                              const std::vector<LabeledSequence>& test,
                              double threshold = 0.5);

// Trigger sets and a content hash of each split.
nlohmann::json DatasetManifest(const DetectorDataset& dataset);

nlohmann::json SequenceToJson(const LabeledSequence& s);
LabeledSequence SequenceFromJson(const nlohmann::json& j);

}  // namespace graderprobe

#endif  // GRADERPROBE_DEFEND_SENSITIVE_HPP_
