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

#include "graderprobe/perturb.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "graderprobe/analysis.hpp"

namespace graderprobe {
namespace {

void CheckAligned(const Essay& essay, const AttributionRecord& record) {
  if (record.attributions.size() != essay.tokens.size() ||
      record.tokens != essay.tokens) {
    throw ValidationError("attribution record does not align with essay " +
                          std::to_string(essay.essay_id));
  }
}

void CheckFraction(double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ValidationError("fraction must lie in [0, 1]");
  }
}

std::size_t CountFor(double fraction, std::size_t n) {
  // The epsilon keeps fractions such as 1/3 * 3 from flooring to 0.
  return std::min(n, static_cast<std::size_t>(
                         std::floor(fraction * static_cast<double>(n) + 1e-9)));
}

bool IsAlphabetic(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalpha(c) != 0;
  });
}

}  // namespace

std::string ToString(PerturbKind k) {
  switch (k) {
    case PerturbKind::kDeleteLeast: return "delete-least";
    case PerturbKind::kAddMost: return "add-most";
    case PerturbKind::kShuffleSentences: return "shuffle-sentences";
    case PerturbKind::kShuffleWords: return "shuffle-words";
    case PerturbKind::kLexiconSwap: return "lexicon-swap";
    case PerturbKind::kInsertText: return "insert-text";
    case PerturbKind::kGarbage: return "garbage";
  }
  return "unknown";
}

PerturbKind ParsePerturbKind(const std::string& s) {
  for (auto k : {PerturbKind::kDeleteLeast, PerturbKind::kAddMost,
                 PerturbKind::kShuffleSentences, PerturbKind::kShuffleWords,
                 PerturbKind::kLexiconSwap, PerturbKind::kInsertText,
                 PerturbKind::kGarbage}) {
    if (ToString(k) == s) return k;
  }
  throw ValidationError("unknown perturbation kind " + s);
}

std::string ToString(InsertPosition p) {
  switch (p) {
    case InsertPosition::kBegin: return "begin";
    case InsertPosition::kEnd: return "end";
    case InsertPosition::kRandom: return "random";
  }
  return "unknown";
}

InsertPosition ParseInsertPosition(const std::string& s) {
  if (s == "begin") return InsertPosition::kBegin;
  if (s == "end") return InsertPosition::kEnd;
  if (s == "random") return InsertPosition::kRandom;
  throw ValidationError("unknown insertion position " + s);
}

Essay KeepPositions(const Essay& essay, const std::vector<bool>& keep) {
  Essay out = essay;
  out.tokens.clear();
  out.sentences.clear();
  for (const auto& span : essay.sentences) {
    const std::size_t begin = out.tokens.size();
    for (std::size_t i = span.begin; i < span.end; ++i) {
      if (keep[i]) out.tokens.push_back(essay.tokens[i]);
    }
    if (out.tokens.size() > begin) out.sentences.push_back({begin, out.tokens.size()});
  }
  return out;
}

std::vector<std::size_t> AttributionOrder(const AttributionRecord& record) {
  std::vector<std::size_t> order(record.attributions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return record.attributions[a] < record.attributions[b];
  });
  return order;
}

Essay DeleteLeastAttributed(const Essay& essay, const AttributionRecord& record,
                            double fraction) {
  CheckAligned(essay, record);
  CheckFraction(fraction);
  const auto order = AttributionOrder(record);
  std::vector<bool> keep(essay.tokens.size(), true);
  const std::size_t count = CountFor(fraction, order.size());
  for (std::size_t i = 0; i < count; ++i) keep[order[i]] = false;
  return KeepPositions(essay, keep);
}

Essay DeleteMostAttributed(const Essay& essay, const AttributionRecord& record,
                           double fraction) {
  CheckAligned(essay, record);
  CheckFraction(fraction);
  auto order = AttributionOrder(record);
  std::vector<bool> keep(essay.tokens.size(), true);
  const std::size_t count = CountFor(fraction, order.size());
  for (std::size_t i = 0; i < count; ++i) keep[order[order.size() - 1 - i]] = false;
  return KeepPositions(essay, keep);
}

Essay DeleteLeastAttributedIterative(const ScoringModel& model, const Essay& essay,
                                     double fraction, const IGConfig& ig) {
  CheckFraction(fraction);
  const std::size_t count = CountFor(fraction, essay.tokens.size());
  Essay current = essay;
  for (std::size_t step = 0; step < count; ++step) {
    const auto record = IntegratedGradients(model, current, ig);
    const auto order = AttributionOrder(record);
    std::vector<bool> keep(current.tokens.size(), true);
    keep[order.front()] = false;
    current = KeepPositions(current, keep);
  }
  return current;
}

Essay AddMostAttributed(const Essay& essay, const AttributionRecord& record,
                        double fraction) {
  CheckAligned(essay, record);
  CheckFraction(fraction);
  const auto order = AttributionOrder(record);
  std::vector<bool> keep(essay.tokens.size(), false);
  const std::size_t count = CountFor(fraction, order.size());
  for (std::size_t i = 0; i < count; ++i) keep[order[order.size() - 1 - i]] = true;
  return KeepPositions(essay, keep);
}

Essay Shuffle(const Essay& essay, ShuffleLevel level, std::uint64_t seed) {
  Rng rng(seed);
  Essay out = essay;
  if (level == ShuffleLevel::kSentence) {
    std::vector<std::size_t> order(essay.sentences.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    out.tokens.clear();
    out.sentences.clear();
    for (auto s : order) {
      const auto& span = essay.sentences[s];
      const std::size_t begin = out.tokens.size();
      out.tokens.insert(out.tokens.end(),
                        essay.tokens.begin() + static_cast<std::ptrdiff_t>(span.begin),
                        essay.tokens.begin() + static_cast<std::ptrdiff_t>(span.end));
      out.sentences.push_back({begin, out.tokens.size()});
    }
  } else {
    std::shuffle(out.tokens.begin(), out.tokens.end(), rng);
  }
  return out;
}

Essay LexiconSwap(const Essay& essay, const AttributionRecord& record,
                  const EmbeddingTable& table, const Vocabulary& vocab,
                  double band) {
  CheckAligned(essay, record);
  if (!(band > 0.0 && band <= 0.5)) throw ValidationError("band must lie in (0, 0.5]");
  const auto order = AttributionOrder(record);
  const std::size_t count = CountFor(band, order.size());
  std::set<std::size_t> targets;
  for (std::size_t i = 0; i < count; ++i) {
    targets.insert(order[i]);
    targets.insert(order[order.size() - 1 - i]);
  }
  Essay out = essay;
  for (auto pos : targets) {
    const TokenId id = vocab.Id(essay.tokens[pos]);
    const auto nn = NearestNeighbors(table, id, 1);
    out.tokens[pos] = vocab.Token(nn.front());
  }
  return out;
}

double TopBandChangeRate(const AttributionRecord& before,
                         const AttributionRecord& after, double fraction) {
  if (before.attributions.size() != after.attributions.size()) {
    throw ValidationError("records differ in length");
  }
  const std::size_t count = CountFor(fraction, before.attributions.size());
  if (count == 0) return 0.0;
  const auto ob = AttributionOrder(before);
  const auto oa = AttributionOrder(after);
  std::set<std::size_t> top_after(oa.end() - static_cast<std::ptrdiff_t>(count), oa.end());
  std::size_t changed = 0;
  for (auto it = ob.end() - static_cast<std::ptrdiff_t>(count); it != ob.end(); ++it) {
    if (!top_after.contains(*it)) ++changed;
  }
  return static_cast<double>(changed) / static_cast<double>(count);
}

Essay InsertText(const Essay& essay, std::span<const std::string> payload,
                 InsertPosition position, std::uint64_t seed) {
  if (payload.empty()) throw ValidationError("insertion payload is empty");
  std::size_t boundary = 0;  // number of original sentences before the payload
  switch (position) {
    case InsertPosition::kBegin: boundary = 0; break;
    case InsertPosition::kEnd: boundary = essay.sentences.size(); break;
    case InsertPosition::kRandom: {
      Rng rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, essay.sentences.size());
      boundary = pick(rng);
      break;
    }
  }
  const std::size_t at =
      boundary < essay.sentences.size() ? essay.sentences[boundary].begin
                                        : essay.tokens.size();
  Essay out = essay;
  out.tokens.clear();
  out.sentences.clear();
  out.tokens.insert(out.tokens.end(), essay.tokens.begin(),
                    essay.tokens.begin() + static_cast<std::ptrdiff_t>(at));
  for (std::size_t s = 0; s < boundary; ++s) out.sentences.push_back(essay.sentences[s]);
  for (const auto& span : SegmentSentences(payload)) {
    out.sentences.push_back({span.begin + at, span.end + at});
  }
  out.tokens.insert(out.tokens.end(), payload.begin(), payload.end());
  out.tokens.insert(out.tokens.end(),
                    essay.tokens.begin() + static_cast<std::ptrdiff_t>(at),
                    essay.tokens.end());
  for (std::size_t s = boundary; s < essay.sentences.size(); ++s) {
    out.sentences.push_back({essay.sentences[s].begin + payload.size(),
                             essay.sentences[s].end + payload.size()});
  }
  return out;
}

GarbageLexicon BuildGarbageLexicon(const std::map<std::string, std::size_t>& counts,
                                   std::span<const std::string> function_words) {
  const std::set<std::string> functional(function_words.begin(), function_words.end());
  std::vector<std::pair<std::string, std::size_t>> content;
  for (const auto& [tok, n] : counts) {
    if (IsAlphabetic(tok) && !functional.contains(tok)) content.emplace_back(tok, n);
  }
  GarbageLexicon lex;
  if (content.empty()) throw ValidationError("no content words for garbage generation");
  std::vector<double> freq;
  for (const auto& [tok, n] : content) freq.push_back(static_cast<double>(n));
  const double median = Quantile(freq, 0.5);
  for (const auto& [tok, n] : content) {
    if (static_cast<double>(n) <= median) lex.rare_words.push_back(tok);
  }
  for (const char* d : {"the", "a"}) {
    if (counts.contains(d)) lex.determiners.emplace_back(d);
  }
  if (counts.contains(".")) lex.terminator = ".";
  return lex;
}

std::vector<std::string> GenerateGarbage(const GarbageLexicon& lexicon,
                                         std::size_t length, std::uint64_t seed) {
  if (length < 1) throw ValidationError("garbage length must be >= 1");
  if (lexicon.rare_words.empty()) throw ValidationError("garbage lexicon is empty");
  // 'D' determiner, 'C' content slot, '.' terminator.
  static const std::vector<std::string> kTemplates = {
      "DCCCDC.", "CCDCC.", "DCCDCCC.", "CDCC."};
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_t(0, kTemplates.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_w(0, lexicon.rare_words.size() - 1);
  std::vector<std::string> out;
  while (out.size() < length) {
    for (char slot : kTemplates[pick_t(rng)]) {
      if (out.size() >= length) break;
      if (slot == 'D' && !lexicon.determiners.empty()) {
        std::uniform_int_distribution<std::size_t> pick_d(0, lexicon.determiners.size() - 1);
        out.push_back(lexicon.determiners[pick_d(rng)]);
      } else if (slot == '.' ) {
        if (!lexicon.terminator.empty()) out.push_back(lexicon.terminator);
      } else {
        out.push_back(lexicon.rare_words[pick_w(rng)]);
      }
    }
  }
  return out;
}

PerturbStats ComputePerturbStats(std::span<const double> original,
                                 std::span<const double> perturbed,
                                 const PromptSpec& spec) {
  if (original.size() != perturbed.size()) {
    throw ValidationError("score lists differ in length");
  }
  PerturbStats s;
  if (original.empty()) return s;
  const double range = spec.score_max - spec.score_min;
  std::vector<double> deltas(original.size());
  double pos_sum = 0.0, neg_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    deltas[i] = 100.0 * (perturbed[i] - original[i]) / range;
    if (deltas[i] > 0) {
      pos_sum += deltas[i];
      ++pos;
    } else if (deltas[i] < 0) {
      neg_sum += -deltas[i];
      ++neg;
    }
  }
  const double n = static_cast<double>(original.size());
  s.mu_pos = pos ? pos_sum / static_cast<double>(pos) : 0.0;
  s.mu_neg = neg ? neg_sum / static_cast<double>(neg) : 0.0;
  s.n_pos = 100.0 * static_cast<double>(pos) / n;
  s.n_neg = 100.0 * static_cast<double>(neg) / n;
  s.sigma = StdDev(deltas);
  return s;
}

nlohmann::json StatsToJson(const PerturbStats& s) {
  return {{"mu_pos", s.mu_pos}, {"mu_neg", s.mu_neg}, {"n_pos", s.n_pos},
          {"n_neg", s.n_neg},   {"sigma", s.sigma}};
}

std::vector<RetentionPoint> QwkRetentionCurve(
    const ScoringModel& model, const Corpus& corpus,
    std::span<const AttributionRecord> records, std::span<const double> fractions,
    RetentionMode mode, int workers) {
  if (records.size() != corpus.essays.size()) {
    throw ValidationError("one attribution record per essay is required");
  }
  const auto base_pred = PredictCorpus(model, corpus, workers);
  const double base = CorpusQwk(corpus, base_pred);
  if (!(base > 0.0)) {
    throw ValidationError("original QWK is not positive; relative curve undefined");
  }
  std::vector<RetentionPoint> out;
  for (double f : fractions) {
    Corpus perturbed;
    perturbed.prompts = corpus.prompts;
    perturbed.essays.resize(corpus.essays.size());
    ParallelFor(corpus.essays.size(), workers, [&](std::size_t i) {
      perturbed.essays[i] =
          mode == RetentionMode::kDelete
              ? DeleteLeastAttributed(corpus.essays[i], records[i], f)
              : AddMostAttributed(corpus.essays[i], records[i], f);
    });
    const double q = CorpusQwk(perturbed, PredictCorpus(model, perturbed, workers));
    out.push_back({f, q, q / base});
  }
  return out;
}

}  // namespace graderprobe
