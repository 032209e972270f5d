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

#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "graderprobe/analysis.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

using testing::MakeEssay;

// Pairwise form of QWK: observed mean squared disagreement over the mean
// squared disagreement of all reference x prediction cross pairs. The
// (K - 1)^2 weight normalization cancels.
double QwkOracle(const std::vector<RatingPair>& pairs) {
  double obs = 0.0, exp = 0.0;
  for (const auto& p : pairs) obs += std::pow(p.reference - p.predicted, 2);
  for (const auto& a : pairs) {
    for (const auto& b : pairs) exp += std::pow(a.reference - b.predicted, 2);
  }
  const double n = static_cast<double>(pairs.size());
  return 1.0 - (obs / n) / (exp / (n * n));
}

TEST(Qwk, MatchesPairwiseOracleOnRandomTables) {
  Rng rng(2024);
  int checked = 0;
  while (checked < 50) {
    const int lo = std::uniform_int_distribution<int>(0, 3)(rng);
    const int k = std::uniform_int_distribution<int>(2, 7)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 80)(rng);
    std::uniform_int_distribution<int> r(lo, lo + k - 1);
    std::vector<RatingPair> pairs(n);
    for (auto& p : pairs) {
      p.reference = r(rng);
      p.predicted = rng() % 3 == 0 ? r(rng) : std::clamp(p.reference + (int)(rng() % 3) - 1, lo, lo + k - 1);
    }
    std::set<int> refs, preds;
    for (const auto& p : pairs) refs.insert(p.reference), preds.insert(p.predicted);
    if (refs.size() < 2 && preds.size() < 2) continue;
    EXPECT_NEAR(Qwk(pairs, {lo, lo + k - 1}), QwkOracle(pairs), 1e-12);
    ++checked;
  }
}

TEST(Qwk, PerfectAgreementIsOne) {
  const std::vector<RatingPair> pairs = {{1, 1}, {2, 2}, {3, 3}, {2, 2}};
  EXPECT_DOUBLE_EQ(Qwk(pairs, {1, 3}), 1.0);
}

TEST(Qwk, SwappedPairOnThreePointScale) {
  const std::vector<RatingPair> pairs = {{1, 2}, {2, 1}};
  EXPECT_NEAR(Qwk(pairs, {1, 3}), QwkOracle(pairs), 1e-12);
  EXPECT_NEAR(Qwk(pairs, {1, 3}), -1.0, 1e-12);
}

TEST(Qwk, Symmetric) {
  const std::vector<RatingPair> a = {{0, 1}, {2, 2}, {3, 1}, {1, 0}, {4, 4}};
  std::vector<RatingPair> b;
  for (const auto& p : a) b.push_back({p.predicted, p.reference});
  EXPECT_NEAR(Qwk(a, {0, 4}), Qwk(b, {0, 4}), 1e-15);
}

TEST(Qwk, ConstantRatersDefinedAsZero) {
  const std::vector<RatingPair> pairs = {{2, 2}, {2, 2}};
  EXPECT_EQ(Qwk(pairs, {1, 3}), 0.0);
}

TEST(ToRating, RoundsAndClamps) {
  const PromptSpec spec{1, 2, 12, ""};
  EXPECT_EQ(ToRating(0.6, spec), 8);
  EXPECT_EQ(ToRating(0.0, spec), 2);
  EXPECT_EQ(ToRating(1.4, spec), 12);
  EXPECT_EQ(ToRating(-0.2, spec), 2);
}

TEST(Pmi, IndependentTokenNearZero) {
  const PromptSpec spec{1, 0, 3, ""};
  Corpus c{{spec}, {}};
  for (int i = 0; i < 20; ++i) {
    const int cls = i % 2 ? 3 : 0;
    c.essays.push_back(MakeEssay(i, cls ? "t x y z" : "t u v w", cls, spec));
  }
  for (int cls : {0, 3}) EXPECT_LT(std::fabs(Pmi(c, "t", cls)), 0.05);
}

TEST(Pmi, ExclusiveTokenPeaksAtItsClass) {
  const PromptSpec spec{1, 0, 3, ""};
  Corpus c{{spec}, {}};
  const std::vector<std::string> fill = {"a b c", "b c d", "c d a", "d a b"};
  for (int i = 0; i < 20; ++i) {
    const int cls = i % 4;
    std::string text = fill[static_cast<std::size_t>(i % 4)];
    if (cls == 2) text += " m";
    if (i % 3 == 0) text += " a";
    c.essays.push_back(MakeEssay(i, text, cls, spec));
  }
  // Brute-force counts straight from the essays.
  const double k = 1.0;
  std::set<std::string> types;
  std::map<std::pair<std::string, int>, double> joint;
  for (const auto& e : c.essays) {
    for (const auto& t : e.tokens) {
      types.insert(t);
      joint[{t, e.raw_score}] += 1.0;
    }
  }
  auto smoothed = [&](const std::string& t, int cls) { return joint[{t, cls}] + k; };
  double total = 0.0;
  for (const auto& t : types) {
    for (int cls = 0; cls < 4; ++cls) total += smoothed(t, cls);
  }
  auto oracle = [&](const std::string& tok, int cls) {
    double pt = 0.0, pc = 0.0;
    for (int q = 0; q < 4; ++q) pt += smoothed(tok, q);
    for (const auto& t : types) pc += smoothed(t, cls);
    return std::log2(smoothed(tok, cls) * total / (pt * pc));
  };
  const PmiTable table(c, k);
  int best = -1;
  double best_v = -1e300;
  for (int cls = 0; cls < 4; ++cls) {
    const double v = table.Pmi("m", cls);
    EXPECT_NEAR(v, oracle("m", cls), 1e-12);
    EXPECT_NEAR(table.Pmi("a", cls), oracle("a", cls), 1e-12);
    if (v > best_v) best_v = v, best = cls;
  }
  EXPECT_EQ(best, 2);
  EXPECT_THROW(table.Pmi("absent", 0), ValidationError);
}

}  // namespace
}  // namespace graderprobe
