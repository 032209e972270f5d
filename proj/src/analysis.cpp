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

#include "graderprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

namespace graderprobe {

double Qwk(std::span<const RatingPair> pairs, RatingScale scale) {
  if (pairs.empty()) throw ValidationError("QWK needs at least one pair");
  if (scale.max <= scale.min) throw ValidationError("QWK scale width must be >= 1");
  const auto K = static_cast<std::size_t>(scale.max - scale.min + 1);
  std::vector<double> observed(K * K, 0.0), ref_hist(K, 0.0), pred_hist(K, 0.0);
  for (const auto& p : pairs) {
    if (p.reference < scale.min || p.reference > scale.max ||
        p.predicted < scale.min || p.predicted > scale.max) {
      throw ValidationError("rating outside QWK scale");
    }
    const auto i = static_cast<std::size_t>(p.reference - scale.min);
    const auto j = static_cast<std::size_t>(p.predicted - scale.min);
    observed[i * K + j] += 1.0;
    ref_hist[i] += 1.0;
    pred_hist[j] += 1.0;
  }
  const double n = static_cast<double>(pairs.size());
  const double denom_w = static_cast<double>((K - 1) * (K - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      const double diff = static_cast<double>(i) - static_cast<double>(j);
      const double w = diff * diff / denom_w;
      num += w * observed[i * K + j];
      den += w * ref_hist[i] * pred_hist[j] / n;
    }
  }
  if (den == 0.0) {
    spdlog::warn("qwk: zero expected disagreement (constant ratings); returning 0");
    return 0.0;
  }
  return 1.0 - num / den;
}

int ToRating(double norm_score, const PromptSpec& spec) {
  const double raw = spec.score_min +
                     std::clamp(norm_score, 0.0, 1.0) * (spec.score_max - spec.score_min);
  return std::clamp(static_cast<int>(std::lround(raw)), spec.score_min, spec.score_max);
}

double CorpusQwk(const Corpus& corpus, std::span<const double> predictions) {
  if (predictions.size() != corpus.essays.size()) {
    throw ValidationError("prediction count does not match corpus");
  }
  if (corpus.essays.empty()) throw ValidationError("QWK of empty corpus");
  // Mixed-prompt corpora report the mean of per-prompt QWKs.
  std::set<int> ids;
  for (const auto& e : corpus.essays) ids.insert(e.prompt_id);
  double total = 0.0;
  for (int id : ids) {
    const auto& spec = corpus.prompt(id);
    std::vector<RatingPair> pairs;
    for (std::size_t i = 0; i < corpus.essays.size(); ++i) {
      if (corpus.essays[i].prompt_id != id) continue;
      pairs.push_back({corpus.essays[i].raw_score, ToRating(predictions[i], spec)});
    }
    total += Qwk(pairs, {spec.score_min, spec.score_max});
  }
  return total / static_cast<double>(ids.size());
}

PmiTable::PmiTable(const Corpus& corpus, double smoothing) : smoothing_(smoothing) {
  if (!(smoothing > 0.0)) throw ValidationError("PMI smoothing must be > 0");
  std::set<int> classes;
  std::set<std::string> tokens;
  for (const auto& e : corpus.essays) {
    classes.insert(e.raw_score);
    tokens.insert(e.tokens.begin(), e.tokens.end());
  }
  classes_.assign(classes.begin(), classes.end());
  std::size_t idx = 0;
  for (const auto& t : tokens) token_index_[t] = idx++;
  counts_.assign(tokens.size(), std::vector<double>(classes_.size(), 0.0));
  for (const auto& e : corpus.essays) {
    const auto c = static_cast<std::size_t>(
        std::lower_bound(classes_.begin(), classes_.end(), e.raw_score) -
        classes_.begin());
    for (const auto& t : e.tokens) counts_[token_index_.at(t)][c] += 1.0;
  }
  token_totals_.assign(tokens.size(), 0.0);
  class_totals_.assign(classes_.size(), 0.0);
  for (std::size_t t = 0; t < counts_.size(); ++t) {
    for (std::size_t c = 0; c < classes_.size(); ++c) {
      const double v = counts_[t][c] + smoothing_;
      token_totals_[t] += v;
      class_totals_[c] += v;
      total_ += v;
    }
  }
}

double PmiTable::count(const std::string& token, int score_class) const {
  const auto it = token_index_.find(token);
  if (it == token_index_.end()) return 0.0;
  const auto c = std::lower_bound(classes_.begin(), classes_.end(), score_class);
  if (c == classes_.end() || *c != score_class) return 0.0;
  return counts_[it->second][static_cast<std::size_t>(c - classes_.begin())];
}

double PmiTable::Pmi(const std::string& token, int score_class) const {
  const auto it = token_index_.find(token);
  if (it == token_index_.end()) {
    throw ValidationError("token '" + token + "' does not occur in the corpus");
  }
  const auto c = std::lower_bound(classes_.begin(), classes_.end(), score_class);
  if (c == classes_.end() || *c != score_class) {
    throw ValidationError("score class " + std::to_string(score_class) +
                          " does not occur in the corpus");
  }
  const auto ci = static_cast<std::size_t>(c - classes_.begin());
  const double joint = counts_[it->second][ci] + smoothing_;
  return std::log2(joint * total_ / (token_totals_[it->second] * class_totals_[ci]));
}

double Pmi(const Corpus& corpus, const std::string& token, int score_class,
           double smoothing) {
  return PmiTable(corpus, smoothing).Pmi(token, score_class);
}

}  // namespace graderprobe
