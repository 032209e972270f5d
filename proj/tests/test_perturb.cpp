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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "graderprobe/perturb.hpp"
#include "graderprobe/synth.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

using testing::MakeEssay;

const PromptSpec kSpec{1, 0, 20, ""};

Essay Abc() { return MakeEssay(1, "a b c", 10, kSpec); }

AttributionRecord AbcRecord() {
  AttributionRecord r;
  r.essay_id = 1;
  r.tokens = {"a", "b", "c"};
  r.attributions = {0.5, -0.1, 0.2};
  return r;
}

TEST(DeleteLeastAttributed, Examples) {
  EXPECT_EQ(DeleteLeastAttributed(Abc(), AbcRecord(), 0.0).tokens, Abc().tokens);
  EXPECT_EQ(DeleteLeastAttributed(Abc(), AbcRecord(), 1.0 / 3.0).tokens,
            (std::vector<std::string>{"a", "c"}));
  EXPECT_TRUE(DeleteLeastAttributed(Abc(), AbcRecord(), 1.0).tokens.empty());
  EXPECT_EQ(DeleteMostAttributed(Abc(), AbcRecord(), 1.0 / 3.0).tokens,
            (std::vector<std::string>{"b", "c"}));
}

TEST(DeleteLeastAttributed, MisalignedRecordRejected) {
  auto r = AbcRecord();
  r.attributions.pop_back();
  EXPECT_THROW(DeleteLeastAttributed(Abc(), r, 0.5), ValidationError);
}

TEST(DeleteLeastAttributed, EmptyEssayScoresBaseline) {
  ModelConfig mc;
  mc.init_scale = 0.5;
  const std::vector<std::string> w = {"a", "b", "c"};
  const ScoringModel model(mc, Vocabulary(w));
  const Essay gone = DeleteLeastAttributed(Abc(), AbcRecord(), 1.0);
  EXPECT_DOUBLE_EQ(model.ForwardTokens(gone.tokens), Sigmoid(model.output_bias()));
}

TEST(AddMostAttributed, Examples) {
  EXPECT_EQ(AddMostAttributed(Abc(), AbcRecord(), 1.0).tokens, Abc().tokens);
  EXPECT_TRUE(AddMostAttributed(Abc(), AbcRecord(), 0.0).tokens.empty());
  EXPECT_EQ(AddMostAttributed(Abc(), AbcRecord(), 2.0 / 3.0).tokens,
            (std::vector<std::string>{"a", "c"}));
}

TEST(KeepPositions, DropsEmptiedSentences) {
  const Essay e = MakeEssay(2, "x y. z.", 1, kSpec);
  const Essay k = KeepPositions(e, {true, true, true, false, false});
  EXPECT_EQ(k.tokens, (std::vector<std::string>{"x", "y", "."}));
  ASSERT_EQ(k.sentences.size(), 1u);
  EXPECT_EQ(k.sentences[0], (SentenceSpan{0, 3}));
}

std::multiset<std::string> Bag(const Essay& e) { return {e.tokens.begin(), e.tokens.end()}; }

TEST(Shuffle, SingleSentenceIsIdentityAtSentenceLevel) {
  const Essay e = MakeEssay(3, "one two three four.", 1, kSpec);
  EXPECT_EQ(Shuffle(e, ShuffleLevel::kSentence, 9).tokens, e.tokens);
}

TEST(Shuffle, PreservesMultisetAndIsSeeded) {
  const Essay e = MakeEssay(4, "a b c. d e! f g h? i j k l.", 1, kSpec);
  for (auto level : {ShuffleLevel::kSentence, ShuffleLevel::kWord}) {
    const Essay s = Shuffle(e, level, 5);
    EXPECT_EQ(Bag(s), Bag(e));
    EXPECT_EQ(Shuffle(e, level, 5).tokens, s.tokens);
    EXPECT_EQ(s.sentences.size(), e.sentences.size());
  }
  EXPECT_NE(Shuffle(e, ShuffleLevel::kWord, 5).tokens, e.tokens);
}

TEST(Shuffle, MeanPoolScoreUnchanged) {
  const Corpus c = testing::PlantedCorpus(40, 3);
  ModelConfig mc;
  mc.init_scale = 0.5;
  const ScoringModel model(mc, BuildVocab(c, 1));
  for (const auto& e : c.essays) {
    const double y = model.ForwardTokens(e.tokens);
    EXPECT_EQ(model.ForwardTokens(Shuffle(e, ShuffleLevel::kWord, 1).tokens), y);
    EXPECT_EQ(model.ForwardTokens(Shuffle(e, ShuffleLevel::kSentence, 1).tokens), y);
  }
}

TEST(LexiconSwap, ToyTableReplacements) {
  const std::vector<std::string> w = {"a", "b", "c"};
  const Vocabulary vocab(w);
  EmbeddingTable t{Matrix(5, 2)};
  t.vectors(3, 0) = 1.0;
  t.vectors(4, 0) = 3.0;
  // Exhaustive-distance oracle for the nearest neighbour of every token.
  auto oracle = [&](const std::string& tok) {
    const TokenId q = vocab.Id(tok);
    TokenId best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (TokenId id = kNumSpecialTokens; id < 5; ++id) {
      if (id == q) continue;
      const double d = std::pow(t.vectors(id, 0) - t.vectors(q, 0), 2) +
                       std::pow(t.vectors(id, 1) - t.vectors(q, 1), 2);
      if (d < best_d) best_d = d, best = id;
    }
    return vocab.Token(best);
  };
  // band 1/3 on 3 tokens swaps exactly one top (a) and one bottom (b).
  const Essay s = LexiconSwap(Abc(), AbcRecord(), t, vocab, 1.0 / 3.0);
  EXPECT_EQ(s.tokens, (std::vector<std::string>{oracle("a"), oracle("b"), "c"}));
  for (std::size_t i : {0u, 1u}) EXPECT_NE(s.tokens[i], Abc().tokens[i]);
  EXPECT_THROW(LexiconSwap(Abc(), AbcRecord(), t, vocab, 0.0), ValidationError);
}

TEST(TopBandChangeRate, CountsLeavers) {
  AttributionRecord before = AbcRecord();
  AttributionRecord after = AbcRecord();
  EXPECT_DOUBLE_EQ(TopBandChangeRate(before, after, 1.0 / 3.0), 0.0);
  after.attributions = {0.0, 0.9, 0.2};
  EXPECT_DOUBLE_EQ(TopBandChangeRate(before, after, 1.0 / 3.0), 1.0);
}

TEST(InsertText, PositionsAndInverse) {
  const Essay e = MakeEssay(5, "first one. second one.", 1, kSpec);
  const std::vector<std::string> fact = {"the", "world", "is", "flat"};
  auto end = InsertText(e, fact, InsertPosition::kEnd, 0);
  std::vector<std::string> expect = e.tokens;
  expect.insert(expect.end(), fact.begin(), fact.end());
  EXPECT_EQ(end.tokens, expect);

  auto begin = InsertText(e, fact, InsertPosition::kBegin, 0);
  EXPECT_TRUE(std::equal(fact.begin(), fact.end(), begin.tokens.begin()));
  EXPECT_EQ(std::vector<std::string>(begin.tokens.begin() + 4, begin.tokens.end()), e.tokens);

  const auto mid = InsertText(e, fact, InsertPosition::kRandom, 3);
  EXPECT_EQ(mid.tokens.size(), e.tokens.size() + 4);
  EXPECT_EQ(InsertText(e, fact, InsertPosition::kRandom, 3).tokens, mid.tokens);
  EXPECT_THROW(InsertText(e, {}, InsertPosition::kEnd, 0), ValidationError);
}

TEST(Garbage, DeterministicInVocabularyAndRare) {
  const Corpus c = testing::PlantedCorpus(200, 4);
  std::map<std::string, std::size_t> counts;
  for (const auto& e : c.essays) {
    for (const auto& t : e.tokens) ++counts[t];
  }
  const auto lex = BuildGarbageLexicon(counts, SynthFunctionWords());
  const auto g = GenerateGarbage(lex, 10, 42);
  EXPECT_EQ(g.size(), 10u);
  EXPECT_EQ(GenerateGarbage(lex, 10, 42), g);

  // Rare means at or below the median count of alphabetic content words.
  std::vector<std::size_t> content_counts;
  const auto& fw = SynthFunctionWords();
  for (const auto& [tok, n] : counts) {
    const bool alpha = std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isalpha(static_cast<unsigned char>(ch)); });
    if (alpha && std::find(fw.begin(), fw.end(), tok) == fw.end()) content_counts.push_back(n);
  }
  std::sort(content_counts.begin(), content_counts.end());
  const double median = Quantile(std::vector<double>(content_counts.begin(), content_counts.end()), 0.5);

  const auto long_text = GenerateGarbage(lex, 2000, 7);
  std::size_t content = 0, rare = 0;
  for (const auto& t : long_text) {
    EXPECT_TRUE(counts.count(t)) << t;
    if (std::find(fw.begin(), fw.end(), t) != fw.end() || t == lex.terminator) continue;
    ++content;
    if (static_cast<double>(counts[t]) <= median) ++rare;
  }
  ASSERT_GT(content, 0u);
  EXPECT_GE(static_cast<double>(rare) / static_cast<double>(content), 0.8);
  EXPECT_THROW(GenerateGarbage(lex, 0, 1), ValidationError);
}

TEST(PerturbStats, HandArithmetic) {
  const std::vector<double> a = {10, 10}, b = {12, 8};
  const auto s = ComputePerturbStats(a, b, kSpec);
  EXPECT_DOUBLE_EQ(s.mu_pos, 10.0);
  EXPECT_DOUBLE_EQ(s.mu_neg, 10.0);
  EXPECT_DOUBLE_EQ(s.n_pos, 50.0);
  EXPECT_DOUBLE_EQ(s.n_neg, 50.0);
  EXPECT_DOUBLE_EQ(s.sigma, 10.0);
  const auto z = ComputePerturbStats(a, a, kSpec);
  EXPECT_EQ(z.mu_pos + z.mu_neg + z.n_pos + z.n_neg + z.sigma, 0.0);
  EXPECT_THROW(ComputePerturbStats(a, std::vector<double>{1}, kSpec), ValidationError);
}

TEST(QwkRetention, IdentityEndpoints) {
  const Corpus c = testing::PlantedCorpus(150, 8);
  const auto model = testing::TrainedModel(c, ModelVariant::kMeanPool, 3);
  IGConfig ig;
  ig.steps = 5;
  const auto recs = AttributeCorpus(model, c, ig);
  const std::vector<double> f = {0.0, 1.0};
  const auto del = QwkRetentionCurve(model, c, recs, f, RetentionMode::kDelete);
  const auto add = QwkRetentionCurve(model, c, recs, f, RetentionMode::kAdd);
  EXPECT_DOUBLE_EQ(del[0].relative_qwk, 1.0);
  EXPECT_DOUBLE_EQ(add[1].relative_qwk, 1.0);
}

}  // namespace
}  // namespace graderprobe
