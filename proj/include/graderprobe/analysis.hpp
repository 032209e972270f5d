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

#ifndef GRADERPROBE_ANALYSIS_HPP_
#define GRADERPROBE_ANALYSIS_HPP_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "graderprobe/corpus.hpp"

namespace graderprobe {

struct RatingScale {
  int min = 0;
  int max = 1;
};

struct RatingPair {
  int reference = 0;
  int predicted = 0;
};

// Quadratic weighted kappa:
//   1 - sum_ij w_ij O_ij / sum_ij w_ij E_ij,  w_ij = (i - j)^2 / (K - 1)^2
// where O is the observed K x K contingency table and E the outer product
// of its marginals divided by the number of pairs. When sum w E is zero
// (both raters constant) the value is defined as 0 and a warning is logged.
double Qwk(std::span<const RatingPair> pairs, RatingScale scale);

// Nearest integer rating for a normalized prediction, clamped to the range.
int ToRating(double norm_score, const PromptSpec& spec);

// QWK between raw scores and model predictions (normalized, corpus order).
double CorpusQwk(const Corpus& corpus, std::span<const double> predictions);

// Token / score-class co-occurrence statistics over token occurrences.
// Joint counts are add-`smoothing` smoothed over the full token x class
// grid before forming probabilities; PMI uses log base 2.
class PmiTable {
 public:
  PmiTable(const Corpus& corpus, double smoothing = 1.0);

  double Pmi(const std::string& token, int score_class) const;
  bool HasToken(const std::string& token) const { return token_index_.contains(token); }
  const std::vector<int>& classes() const { return classes_; }
  double count(const std::string& token, int score_class) const;

 private:
  std::map<std::string, std::size_t> token_index_;
  std::vector<int> classes_;
  std::vector<std::vector<double>> counts_;  // token x class, unsmoothed
  std::vector<double> token_totals_;
  std::vector<double> class_totals_;
  double total_ = 0.0;
  double smoothing_;
};

// Throws ValidationError if the token never occurs in the corpus.
double Pmi(const Corpus& corpus, const std::string& token, int score_class,
           double smoothing = 1.0);

}  // namespace graderprobe

#endif  // GRADERPROBE_ANALYSIS_HPP_
