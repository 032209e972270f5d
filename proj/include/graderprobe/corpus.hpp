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

// Essay corpora: ASAP ingestion, tokenization, vocabularies, score
// normalization and train/validation/test splitting.

#ifndef GRADERPROBE_CORPUS_HPP_
#define GRADERPROBE_CORPUS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "graderprobe/common.hpp"
#include "json.hpp"

namespace graderprobe {

struct PromptSpec {
  int prompt_id = 0;
  int score_min = 0;
  int score_max = 1;
  std::string description;
};

// Half-open token range [begin, end).
struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const SentenceSpan&) const = default;
};

// Where a perturbed essay came from. Absent on ingested essays.
struct Provenance {
  std::string kind;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
  std::int64_t parent_id = 0;
};

struct Essay {
  std::int64_t essay_id = 0;
  int prompt_id = 0;
  std::vector<std::string> tokens;
  std::vector<SentenceSpan> sentences;
  int raw_score = 0;
  double norm_score = 0.0;
  std::optional<Provenance> provenance;
};

struct Corpus {
  std::vector<PromptSpec> prompts;
  std::vector<Essay> essays;

  // Throws ValidationError when the prompt is unknown.
  const PromptSpec& prompt(int prompt_id) const;
  // Essays of one prompt, in corpus order.
  Corpus ForPrompt(int prompt_id) const;
};

struct TokenizedText {
  std::vector<std::string> tokens;
  std::vector<SentenceSpan> sentences;
};

// Lowercases, splits punctuation into its own tokens and ends a sentence at
// '.', '!' or '?'. ASAP anonymization markers such as "@PERSON1" stay whole.
TokenizedText Tokenize(std::string_view text);

std::string JoinTokens(std::span<const std::string> tokens);

// Recomputes a sentence partition from terminator tokens.
std::vector<SentenceSpan> SegmentSentences(std::span<const std::string> tokens);

double NormalizeScore(int raw, const PromptSpec& spec);
double DenormalizeScore(double norm, const PromptSpec& spec);

void ValidatePrompts(std::span<const PromptSpec> prompts);

// Reads an ASAP training TSV (essay_id, essay_set, essay, domain1_score
// columns, any order). Rows of unlisted essay sets are skipped.
Corpus LoadAsapTsv(const std::filesystem::path& path,
                   std::span<const PromptSpec> prompts);

class Vocabulary {
 public:
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary();
  // Tokens in index order after PAD and UNK.
  explicit Vocabulary(std::span<const std::string> ordinary_tokens);

  TokenId Id(const std::string& token) const;
  bool Contains(const std::string& token) const;
  const std::string& Token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  std::vector<TokenId> Encode(std::span<const std::string> tokens) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::json ToJson() const;
  static Vocabulary FromJson(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Tokens with count >= min_count, ordered by count desc then lexicographic.
Vocabulary BuildVocab(const Corpus& corpus, int min_count);

std::map<std::string, std::size_t> TokenCounts(const Corpus& corpus);

struct CorpusSplits {
  Corpus train;
  Corpus validation;
  Corpus test;
};

// Seeded partition stratified by raw score. Falls back to an unstratified
// shuffle (with a warning) if a score class has fewer essays than splits.
CorpusSplits SplitCorpus(const Corpus& corpus, std::array<double, 3> fractions,
                         std::uint64_t seed);

nlohmann::json PromptToJson(const PromptSpec& p);
PromptSpec PromptFromJson(const nlohmann::json& j);
std::vector<PromptSpec> LoadPrompts(const std::filesystem::path& path);
void SavePrompts(std::span<const PromptSpec> prompts,
                 const std::filesystem::path& path);

nlohmann::json EssayToJson(const Essay& e);
Essay EssayFromJson(const nlohmann::json& j, std::span<const PromptSpec> prompts);

// One essay per line. Reading needs the prompts to recompute norm_score.
void WriteCorpusJsonl(const Corpus& corpus, const std::filesystem::path& path);
Corpus ReadCorpusJsonl(const std::filesystem::path& path,
                       std::span<const PromptSpec> prompts);

}  // namespace graderprobe

#endif  // GRADERPROBE_CORPUS_HPP_
