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

#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "graderprobe/corpus.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

using testing::MakeEssay;
using testing::TempDir;

std::filesystem::path WriteTsv(const std::string& name, const std::string& body) {
  const auto dir = TempDir(name);
  const auto path = dir / "data.tsv";
  std::ofstream out(path);
  out << "essay_id\tessay_set\tessay\trater1_domain1\tdomain1_score\n" << body;
  return path;
}

TEST(LoadAsapTsv, NormalizesScoreLinearly) {
  const auto path = WriteTsv("tsv_ok", "1\t1\tDear @CAPS1, hello.\t4\t8\n"
                                       "2\t7\tA short one.\t0\t0\n"
                                       "3\t9\tIgnored prompt.\t0\t3\n");
  const std::vector<PromptSpec> prompts = {{1, 2, 12, ""}, {7, 0, 30, ""}};
  const Corpus c = LoadAsapTsv(path, prompts);
  ASSERT_EQ(c.essays.size(), 2u);
  EXPECT_DOUBLE_EQ(c.essays[0].norm_score, 0.6);
  EXPECT_DOUBLE_EQ(c.essays[1].norm_score, 0.0);
  EXPECT_EQ(c.essays[0].tokens[1], "@caps1");
}

TEST(LoadAsapTsv, OutOfRangeScoreNamesEssay) {
  const auto path = WriteTsv("tsv_range", "41\t1\tText.\t0\t13\n");
  const std::vector<PromptSpec> prompts = {{1, 2, 12, ""}};
  try {
    LoadAsapTsv(path, prompts);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("41"), std::string::npos);
  }
}

TEST(LoadAsapTsv, MalformedRowReportsLine) {
  const auto path = WriteTsv("tsv_bad", "1\t1\tfine.\t0\t5\n2\t1\n");
  const std::vector<PromptSpec> prompts = {{1, 2, 12, ""}};
  try {
    LoadAsapTsv(path, prompts);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Tokenize, SplitsPunctuation) {
  const auto t = Tokenize("Hello, world!");
  EXPECT_EQ(t.tokens, (std::vector<std::string>{"hello", ",", "world", "!"}));
  ASSERT_EQ(t.sentences.size(), 1u);
  EXPECT_EQ(t.sentences[0], (SentenceSpan{0, 4}));
}

TEST(Tokenize, SentenceBoundaries) {
  const auto t = Tokenize("A. B.");
  ASSERT_EQ(t.sentences.size(), 2u);
  EXPECT_EQ(t.sentences[0], (SentenceSpan{0, 2}));
  EXPECT_EQ(t.sentences[1], (SentenceSpan{2, 4}));
}

TEST(Tokenize, EmptyText) {
  const auto t = Tokenize("");
  EXPECT_TRUE(t.tokens.empty());
  EXPECT_TRUE(t.sentences.empty());
}

TEST(Tokenize, IdempotentOnRejoinedTokens) {
  const std::string text = "The dog's bone, (it) was big! Wasn't it? Yes... @PERSON1 said so";
  const auto once = Tokenize(text);
  const auto twice = Tokenize(JoinTokens(once.tokens));
  EXPECT_EQ(once.tokens, twice.tokens);
  EXPECT_EQ(once.sentences, twice.sentences);
}

TEST(BuildVocab, FrequencyCutoff) {
  const PromptSpec spec{1, 0, 1, ""};
  Corpus c{{spec}, {MakeEssay(1, "a a b", 1, spec)}};
  const auto v2 = BuildVocab(c, 2);
  EXPECT_TRUE(v2.Contains("a"));
  EXPECT_FALSE(v2.Contains("b"));
  EXPECT_EQ(v2.Encode(std::vector<std::string>{"b"})[0], kUnkId);
  const auto v1 = BuildVocab(c, 1);
  EXPECT_TRUE(v1.Contains("a"));
  EXPECT_TRUE(v1.Contains("b"));
  EXPECT_EQ(v1.Id(Vocabulary::kPadToken), kPadId);
  EXPECT_EQ(v1.Id(Vocabulary::kUnkToken), kUnkId);
}

TEST(BuildVocab, DeterministicOrderingWithTies) {
  const PromptSpec spec{1, 0, 1, ""};
  Corpus c{{spec}, {MakeEssay(1, "d c b b a a", 1, spec)}};
  const auto v = BuildVocab(c, 1);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{Vocabulary::kPadToken,
                                                  Vocabulary::kUnkToken, "a", "b", "c",
                                                  "d"}));
  EXPECT_EQ(BuildVocab(c, 1).tokens(), v.tokens());
}

TEST(BuildVocab, EmptyCorpusIsError) {
  EXPECT_THROW(BuildVocab(Corpus{}, 1), Error);
}

TEST(NormalizeScore, Examples) {
  EXPECT_DOUBLE_EQ(NormalizeScore(8, {1, 2, 12, ""}), 0.6);
  EXPECT_DOUBLE_EQ(DenormalizeScore(1.0, {1, 0, 60, ""}), 60.0);
  EXPECT_DOUBLE_EQ(NormalizeScore(2, {1, 2, 12, ""}), 0.0);
  EXPECT_THROW(NormalizeScore(13, {1, 2, 12, ""}), ValidationError);
  EXPECT_THROW(DenormalizeScore(1.5, {1, 2, 12, ""}), ValidationError);
}

TEST(NormalizeScore, RoundTripExact) {
  for (const PromptSpec spec : {PromptSpec{1, 2, 12, ""}, PromptSpec{2, 0, 60, ""},
                                PromptSpec{3, 1, 6, ""}, PromptSpec{4, 0, 3, ""}}) {
    for (int r = spec.score_min; r <= spec.score_max; ++r) {
      EXPECT_EQ(DenormalizeScore(NormalizeScore(r, spec), spec), static_cast<double>(r));
    }
  }
}

Corpus HundredEssays() {
  const PromptSpec spec{1, 0, 4, ""};
  Corpus c{{spec}, {}};
  for (int i = 0; i < 100; ++i) c.essays.push_back(MakeEssay(i, "word.", i % 5, spec));
  return c;
}

TEST(SplitCorpus, SizesAndPartition) {
  const Corpus c = HundredEssays();
  const auto s = SplitCorpus(c, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.essays.size(), 80u);
  EXPECT_EQ(s.validation.essays.size(), 10u);
  EXPECT_EQ(s.test.essays.size(), 10u);
  std::multiset<std::int64_t> ids;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    for (const auto& e : part->essays) ids.insert(e.essay_id);
  }
  EXPECT_EQ(ids.size(), 100u);
  EXPECT_EQ(std::set<std::int64_t>(ids.begin(), ids.end()).size(), 100u);
}

TEST(SplitCorpus, SeedDeterministic) {
  const Corpus c = HundredEssays();
  const auto a = SplitCorpus(c, {0.8, 0.1, 0.1}, 11);
  const auto b = SplitCorpus(c, {0.8, 0.1, 0.1}, 11);
  ASSERT_EQ(a.test.essays.size(), b.test.essays.size());
  for (std::size_t i = 0; i < a.test.essays.size(); ++i) {
    EXPECT_EQ(a.test.essays[i].essay_id, b.test.essays[i].essay_id);
  }
}

TEST(SplitCorpus, Stratified) {
  const Corpus c = HundredEssays();
  const auto s = SplitCorpus(c, {0.8, 0.1, 0.1}, 5);
  std::map<int, int> per_class;
  for (const auto& e : s.test.essays) ++per_class[e.raw_score];
  for (int r = 0; r < 5; ++r) EXPECT_EQ(per_class[r], 2) << "class " << r;
}

TEST(SplitCorpus, FractionsMustSumToOne) {
  EXPECT_THROW(SplitCorpus(HundredEssays(), {0.7, 0.1, 0.1}, 1), ValidationError);
}

TEST(SplitCorpus, SmallClassFallsBack) {
  Corpus c = HundredEssays();
  const PromptSpec wide{1, 0, 9, ""};
  c.prompts = {wide};
  c.essays.push_back(MakeEssay(500, "lonely.", 9, wide));
  const auto s = SplitCorpus(c, {0.8, 0.1, 0.1}, 1);
  EXPECT_EQ(s.train.essays.size() + s.validation.essays.size() + s.test.essays.size(), 101u);
}

TEST(CorpusJsonl, RoundTripWithProvenance) {
  const PromptSpec spec{1, 2, 12, ""};
  Corpus c{{spec}, {MakeEssay(7, "One two. Three!", 8, spec)}};
  c.essays[0].provenance = Provenance{"shuffle-words", 0.0, 99, 3};
  const auto dir = TempDir("jsonl");
  WriteCorpusJsonl(c, dir / "c.jsonl");
  const Corpus back = ReadCorpusJsonl(dir / "c.jsonl", c.prompts);
  ASSERT_EQ(back.essays.size(), 1u);
  EXPECT_EQ(back.essays[0].tokens, c.essays[0].tokens);
  EXPECT_EQ(back.essays[0].sentences, c.essays[0].sentences);
  EXPECT_EQ(back.essays[0].raw_score, 8);
  ASSERT_TRUE(back.essays[0].provenance.has_value());
  EXPECT_EQ(back.essays[0].provenance->seed, 99u);
  EXPECT_EQ(back.essays[0].provenance->parent_id, 3);
}

TEST(Prompts, InvalidRangeRejected) {
  const std::vector<PromptSpec> bad = {{1, 5, 5, ""}};
  EXPECT_THROW(ValidatePrompts(bad), ValidationError);
  const std::vector<PromptSpec> dup = {{1, 0, 5, ""}, {1, 0, 3, ""}};
  EXPECT_THROW(ValidatePrompts(dup), ValidationError);
}

}  // namespace
}  // namespace graderprobe
