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

// Overstability battery: essay perturbations that should change a score but
// often do not, and the statistics used to measure the effect.

#ifndef GRADERPROBE_PERTURB_HPP_
#define GRADERPROBE_PERTURB_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "graderprobe/attribution.hpp"
#include "graderprobe/corpus.hpp"
#include "graderprobe/model.hpp"
#include "json.hpp"

namespace graderprobe {

enum class PerturbKind {
  kDeleteLeast,
  kAddMost,
  kShuffleSentences,
  kShuffleWords,
  kLexiconSwap,
  kInsertText,
  kGarbage,
};

enum class InsertPosition { kBegin, kEnd, kRandom };

std::string ToString(PerturbKind k);
PerturbKind ParsePerturbKind(const std::string& s);
std::string ToString(InsertPosition p);
InsertPosition ParseInsertPosition(const std::string& s);

struct PerturbationPlan {
  PerturbKind kind = PerturbKind::kDeleteLeast;
  double magnitude = 0.0;  // fraction, band or token count depending on kind
  InsertPosition position = InsertPosition::kEnd;
  std::uint64_t seed = 0;
};

// Score deltas as percentages of the prompt's score range.
struct PerturbStats {
  double mu_pos = 0.0;  // mean delta over strictly increased samples
  double mu_neg = 0.0;  // mean |delta| over strictly decreased samples
  double n_pos = 0.0;   // % of samples strictly increased
  double n_neg = 0.0;   // % of samples strictly decreased
  double sigma = 0.0;   // population std of all deltas
};

// Essay with only the positions where keep[i] is true, sentence spans
// rebuilt (sentences that lose every token disappear).
Essay KeepPositions(const Essay& essay, const std::vector<bool>& keep);

// Token positions ordered by attribution ascending, ties by position.
std::vector<std::size_t> AttributionOrder(const AttributionRecord& record);

// Removes the floor(fraction * n) least-attributed tokens using the single
// sorted order of `record`.
Essay DeleteLeastAttributed(const Essay& essay, const AttributionRecord& record,
                            double fraction);
// Removes the floor(fraction * n) most-attributed tokens.
Essay DeleteMostAttributed(const Essay& essay, const AttributionRecord& record,
                           double fraction);
// Variant that re-attributes after every single deletion.
Essay DeleteLeastAttributedIterative(const ScoringModel& model, const Essay& essay,
                                     double fraction, const IGConfig& ig);

// Keeps only the floor(fraction * n) most-attributed tokens, original order.
Essay AddMostAttributed(const Essay& essay, const AttributionRecord& record,
                        double fraction);

enum class ShuffleLevel { kSentence, kWord };

// Sentence level permutes whole sentences; word level permutes all tokens
// and keeps the original sentence lengths as the new partition.
Essay Shuffle(const Essay& essay, ShuffleLevel level, std::uint64_t seed);

// Replaces the floor(band * n) highest- and lowest-attributed tokens with
// their nearest embedding neighbour.
Essay LexiconSwap(const Essay& essay, const AttributionRecord& record,
                  const EmbeddingTable& table, const Vocabulary& vocab,
                  double band);

// Fraction of positions in the top `fraction` of `before` that are no longer
// in the top `fraction` of `after` (both records must have equal length).
double TopBandChangeRate(const AttributionRecord& before,
                         const AttributionRecord& after, double fraction);

// Splices `payload` at the start, the end, or a uniformly chosen sentence
// boundary.
Essay InsertText(const Essay& essay, std::span<const std::string> payload,
                 InsertPosition position, std::uint64_t seed);

struct GarbageLexicon {
  std::vector<std::string> rare_words;
  std::vector<std::string> determiners;
  std::string terminator;
};

// Rare words are alphabetic, non-function tokens whose count is at or below
// the median count of such tokens.
GarbageLexicon BuildGarbageLexicon(const std::map<std::string, std::size_t>& counts,
                                   std::span<const std::string> function_words);

// Grammatical-looking but meaningless text: determiner/content templates
// whose content slots are rare words. Exactly `length` tokens.
std::vector<std::string> GenerateGarbage(const GarbageLexicon& lexicon,
                                         std::size_t length, std::uint64_t seed);

// Scores in raw units.
PerturbStats ComputePerturbStats(std::span<const double> original,
                                 std::span<const double> perturbed,
                                 const PromptSpec& spec);

nlohmann::json StatsToJson(const PerturbStats& s);

enum class RetentionMode { kDelete, kAdd };

struct RetentionPoint {
  double fraction = 0.0;
  double qwk = 0.0;
  double relative_qwk = 0.0;
};

// QWK of the model on essays perturbed by deleting the least-attributed
// (kDelete) or keeping only the most-attributed (kAdd) fraction of tokens,
// relative to the QWK on the original corpus.
std::vector<RetentionPoint> QwkRetentionCurve(
    const ScoringModel& model, const Corpus& corpus,
    std::span<const AttributionRecord> records, std::span<const double> fractions,
    RetentionMode mode, int workers = 1);

}  // namespace graderprobe

#endif  // GRADERPROBE_PERTURB_HPP_
