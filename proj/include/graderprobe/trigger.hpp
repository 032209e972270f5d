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

// Universal adversarial triggers.
//
// A trigger is a fixed token sequence added to every essay to push the
// predicted score toward 1 (increase) or 0 (decrease). The batch loss is the
// mean squared distance of the triggered predictions from that target.
// Each search iteration linearizes the loss around the current trigger
// embeddings and ranks replacement tokens e' at position i by
//
//   (e' - e_i) . grad_{e_i} L
//
// (most negative first). A left-to-right beam search over the top-k
// candidates per position is scored with exact batch losses. The best beam
// is committed only if it strictly lowers the exact loss on the full attack
// set, so the committed loss trace never increases.

#ifndef GRADERPROBE_TRIGGER_HPP_
#define GRADERPROBE_TRIGGER_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "graderprobe/corpus.hpp"
#include "graderprobe/model.hpp"
#include "json.hpp"

namespace graderprobe {

enum class Direction { kIncrease, kDecrease };
enum class TriggerPlacement { kPrepend, kAppend };

std::string ToString(Direction d);
Direction ParseDirection(const std::string& s);
double TargetScore(Direction d);

// c copies of `filler`; falls back (with a warning) to the most frequent
// ordinary token when the filler is not in the vocabulary.
std::vector<TokenId> InitTrigger(const Vocabulary& vocab, std::size_t length,
                                 const std::string& filler = "the");

// The k tokens of `candidates` with the smallest (e' - e_current) . gradient,
// ascending; ties broken by token index.
std::vector<TokenId> CandidateTokens(const EmbeddingTable& table,
                                     std::span<const TokenId> candidates,
                                     TokenId current,
                                     std::span<const double> gradient,
                                     std::size_t k);

// Every non-special token id of the vocabulary.
std::vector<TokenId> OrdinaryTokens(const Vocabulary& vocab);

std::vector<TokenId> ApplyTrigger(std::span<const TokenId> trigger,
                                  std::span<const TokenId> essay,
                                  TriggerPlacement placement);

struct TriggerBatchLoss {
  double loss = 0.0;
  Matrix gradients;  // c x d, averaged over the batch
};

// Mean squared error to the direction's target over `essays`; with
// gradients == true also dL/de for every trigger position.
TriggerBatchLoss TriggerLoss(const ScoringModel& model,
                             std::span<const TokenId> trigger,
                             std::span<const std::vector<TokenId>> essays,
                             Direction direction, TriggerPlacement placement,
                             bool gradients, int workers = 1);

struct BeamEntry {
  std::vector<TokenId> trigger;
  double loss = 0.0;
};

struct TriggerSearchState {
  std::vector<TokenId> trigger;
  std::vector<BeamEntry> beam;  // ascending loss
  Direction direction = Direction::kIncrease;
  Matrix gradients;  // batch-averaged dL/de per trigger position
  std::size_t k = 20;
  std::size_t beam_width = 3;
};

struct TriggerOptions {
  std::size_t length = 3;
  Direction direction = Direction::kIncrease;
  std::size_t k = 20;
  std::size_t beam_width = 3;
  std::size_t iterations = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::string filler = "the";
  TriggerPlacement placement = TriggerPlacement::kPrepend;
  int workers = 1;
};

struct TriggerResult {
  std::vector<std::string> tokens;
  std::vector<TokenId> ids;
  Direction direction = Direction::kIncrease;
  // Exact loss over the full attack set: entry 0 for the initial trigger,
  // then one entry per committed iteration.
  std::vector<double> loss_trace;
  bool converged = false;
  int source_prompt = 0;
  std::string model_checksum;
};

TriggerResult ExtractTrigger(const ScoringModel& model, const Corpus& corpus,
                             const TriggerOptions& options);

// Exact full-set loss of every single-token trigger, ascending (ties by id).
std::vector<std::pair<TokenId, double>> RankSingleTokenTriggers(
    const ScoringModel& model, const Corpus& corpus, Direction direction,
    TriggerPlacement placement = TriggerPlacement::kPrepend, int workers = 1);

struct AttackReport {
  double pct_increased = 0.0;
  double pct_decreased = 0.0;
  double mean_change = 0.0;            // over all essays
  double mean_change_increased = 0.0;  // over strictly increased essays only
  std::vector<std::int64_t> essay_ids;
  std::vector<double> before;  // normalized scores
  std::vector<double> after;
  std::size_t unk_tokens = 0;
};

AttackReport ReportFromScores(std::span<const double> before,
                              std::span<const double> after);

AttackReport EvaluateAttack(const ScoringModel& model, const Corpus& corpus,
                            std::span<const std::string> trigger,
                            TriggerPlacement placement = TriggerPlacement::kPrepend,
                            int workers = 1);

// Maps the trigger into the foreign model's vocabulary (UNK for misses,
// warning when more than half miss) and evaluates it on the foreign corpus.
AttackReport CrossPromptEval(std::span<const std::string> trigger,
                             const ScoringModel& foreign_model,
                             const Corpus& foreign_corpus,
                             TriggerPlacement placement = TriggerPlacement::kPrepend,
                             int workers = 1);

nlohmann::json TriggerToJson(const TriggerResult& t);
TriggerResult TriggerFromJson(const nlohmann::json& j);
nlohmann::json AttackReportToJson(const AttackReport& r);

}  // namespace graderprobe

#endif  // GRADERPROBE_TRIGGER_HPP_
