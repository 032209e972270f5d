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

#include "graderprobe/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace graderprobe {
namespace {

bool IsWordChar(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80 || c == '_';
}

bool IsTerminator(const std::string& t) {
  return t == "." || t == "!" || t == "?";
}

std::vector<std::string> SplitTabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<std::int64_t> ParseInt(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

const PromptSpec& Corpus::prompt(int prompt_id) const {
  for (const auto& p : prompts) {
    if (p.prompt_id == prompt_id) return p;
  }
  throw ValidationError("unknown prompt id " + std::to_string(prompt_id));
}

Corpus Corpus::ForPrompt(int prompt_id) const {
  Corpus out;
  out.prompts.push_back(prompt(prompt_id));
  for (const auto& e : essays) {
    if (e.prompt_id == prompt_id) out.essays.push_back(e);
  }
  return out;
}

TokenizedText Tokenize(std::string_view text) {
  TokenizedText out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    std::string token;
    if (IsWordChar(c) ||
        (c == '@' && i + 1 < text.size() &&
         IsWordChar(static_cast<unsigned char>(text[i + 1])))) {
      token.push_back(static_cast<char>(std::tolower(c)));
      ++i;
      while (i < text.size() && IsWordChar(static_cast<unsigned char>(text[i]))) {
        token.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
    } else {
      token.push_back(static_cast<char>(c));
      ++i;
    }
    out.tokens.push_back(std::move(token));
  }
  out.sentences = SegmentSentences(out.tokens);
  return out;
}

std::vector<SentenceSpan> SegmentSentences(std::span<const std::string> tokens) {
  std::vector<SentenceSpan> spans;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (IsTerminator(tokens[i])) {
      spans.push_back({begin, i + 1});
      begin = i + 1;
    }
  }
  if (begin < tokens.size()) spans.push_back({begin, tokens.size()});
  return spans;
}

std::string JoinTokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

void ValidatePrompts(std::span<const PromptSpec> prompts) {
  std::set<int> seen;
  for (const auto& p : prompts) {
    if (p.score_min >= p.score_max) {
      throw ValidationError("prompt " + std::to_string(p.prompt_id) +
                            ": score_min must be < score_max");
    }
    if (!seen.insert(p.prompt_id).second) {
      throw ValidationError("duplicate prompt id " + std::to_string(p.prompt_id));
    }
  }
}

double NormalizeScore(int raw, const PromptSpec& spec) {
  if (raw < spec.score_min || raw > spec.score_max) {
    throw ValidationError("score " + std::to_string(raw) + " outside [" +
                          std::to_string(spec.score_min) + ", " +
                          std::to_string(spec.score_max) + "]");
  }
  return static_cast<double>(raw - spec.score_min) /
         static_cast<double>(spec.score_max - spec.score_min);
}

double DenormalizeScore(double norm, const PromptSpec& spec) {
  if (!(norm >= 0.0 && norm <= 1.0)) {
    throw ValidationError("normalized score outside [0, 1]");
  }
  const double v =
      spec.score_min + norm * static_cast<double>(spec.score_max - spec.score_min);
  // Undo the one-ulp error of r / range * range so integers round-trip exactly.
  const double r = std::nearbyint(v);
  return std::fabs(v - r) <= 1e-12 * std::max(1.0, std::fabs(r)) ? r : v;
}

Corpus LoadAsapTsv(const std::filesystem::path& path,
                   std::span<const PromptSpec> prompts) {
  ValidatePrompts(prompts);
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Corpus corpus;
  corpus.prompts.assign(prompts.begin(), prompts.end());

  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = SplitTabs(line);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("header lacks column " + name, 1);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column("essay_id");
  const std::size_t c_set = column("essay_set");
  const std::size_t c_text = column("essay");
  const std::size_t c_score = column("domain1_score");
  const std::size_t needed = std::max({c_id, c_set, c_text, c_score}) + 1;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = SplitTabs(line);
    if (fields.size() < needed) {
      throw ParseError("expected at least " + std::to_string(needed) +
                           " columns, got " + std::to_string(fields.size()),
                       line_no);
    }
    const auto id = ParseInt(fields[c_id]);
    const auto set = ParseInt(fields[c_set]);
    const auto score = ParseInt(fields[c_score]);
    if (!id || !set || !score) {
      throw ParseError("non-integer essay_id, essay_set or domain1_score",
                       line_no);
    }
    const auto spec = std::find_if(prompts.begin(), prompts.end(), [&](auto& p) {
      return p.prompt_id == *set;
    });
    if (spec == prompts.end()) continue;
    if (*score < spec->score_min || *score > spec->score_max) {
      throw ValidationError("essay " + std::to_string(*id) + ": score " +
                            std::to_string(*score) + " outside prompt range");
    }
    Essay e;
    e.essay_id = *id;
    e.prompt_id = static_cast<int>(*set);
    auto tok = Tokenize(fields[c_text]);
    e.tokens = std::move(tok.tokens);
    e.sentences = std::move(tok.sentences);
    e.raw_score = static_cast<int>(*score);
    e.norm_score = NormalizeScore(e.raw_score, *spec);
    corpus.essays.push_back(std::move(e));
  }
  return corpus;
}

Vocabulary::Vocabulary() : Vocabulary(std::span<const std::string>{}) {}

Vocabulary::Vocabulary(std::span<const std::string> ordinary_tokens) {
  tokens_.reserve(ordinary_tokens.size() + kNumSpecialTokens);
  tokens_.emplace_back(kPadToken);
  tokens_.emplace_back(kUnkToken);
  for (const auto& t : ordinary_tokens) tokens_.push_back(t);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate vocabulary token " + tokens_[i]);
    }
  }
}

TokenId Vocabulary::Id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::Contains(const std::string& token) const {
  return index_.contains(token);
}

std::vector<TokenId> Vocabulary::Encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(Id(t));
  return ids;
}

nlohmann::json Vocabulary::ToJson() const {
  return nlohmann::json(std::vector<std::string>(tokens_.begin() + kNumSpecialTokens,
                                                 tokens_.end()));
}

Vocabulary Vocabulary::FromJson(const nlohmann::json& j) {
  const auto tokens = j.get<std::vector<std::string>>();
  return Vocabulary(tokens);
}

std::map<std::string, std::size_t> TokenCounts(const Corpus& corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto& e : corpus.essays) {
    for (const auto& t : e.tokens) ++counts[t];
  }
  return counts;
}

Vocabulary BuildVocab(const Corpus& corpus, int min_count) {
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  if (corpus.essays.empty()) throw ValidationError("cannot build vocabulary of empty corpus");
  const auto counts = TokenCounts(corpus);
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= static_cast<std::size_t>(min_count) && tok != Vocabulary::kPadToken &&
        tok != Vocabulary::kUnkToken) {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> ordered;
  ordered.reserve(kept.size());
  for (auto& [tok, n] : kept) ordered.push_back(tok);
  return Vocabulary(ordered);
}

CorpusSplits SplitCorpus(const Corpus& corpus, std::array<double, 3> fractions,
                         std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  const std::size_t n = corpus.essays.size();
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::map<int, std::size_t> class_sizes;
  for (const auto& e : corpus.essays) ++class_sizes[e.raw_score];
  const bool stratify = std::all_of(class_sizes.begin(), class_sizes.end(),
                                    [](const auto& kv) { return kv.second >= 3; });
  if (!stratify) {
    spdlog::warn("split: a score class has fewer than 3 essays; using an "
                 "unstratified split");
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return corpus.essays[a].raw_score < corpus.essays[b].raw_score;
    });
  }

  std::array<std::size_t, 3> target{};
  target[0] = static_cast<std::size_t>(std::llround(fractions[0] * n));
  target[1] = static_cast<std::size_t>(std::llround(fractions[1] * n));
  target[0] = std::min(target[0], n);
  target[1] = std::min(target[1], n - target[0]);
  target[2] = n - target[0] - target[1];

  CorpusSplits out;
  std::array<Corpus*, 3> parts{&out.train, &out.validation, &out.test};
  for (auto* p : parts) p->prompts = corpus.prompts;
  std::array<std::size_t, 3> assigned{};
  for (std::size_t j = 0; j < n; ++j) {
    // Systematic allocation: the split furthest behind its quota wins, so
    // every contiguous run of one score class is spread across splits.
    int best = -1;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      if (assigned[s] >= target[s]) continue;
      const double deficit = static_cast<double>(target[s]) * (j + 1) / n -
                             static_cast<double>(assigned[s]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    ++assigned[best];
    parts[best]->essays.push_back(corpus.essays[order[j]]);
  }
  return out;
}

nlohmann::json PromptToJson(const PromptSpec& p) {
  return {{"prompt_id", p.prompt_id},
          {"score_min", p.score_min},
          {"score_max", p.score_max},
          {"description", p.description}};
}

PromptSpec PromptFromJson(const nlohmann::json& j) {
  PromptSpec p;
  p.prompt_id = j.at("prompt_id").get<int>();
  p.score_min = j.at("score_min").get<int>();
  p.score_max = j.at("score_max").get<int>();
  p.description = j.value("description", "");
  return p;
}

std::vector<PromptSpec> LoadPrompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("prompt config: ") + e.what(), 1);
  }
  if (j.is_object() && j.contains("prompts")) j = j.at("prompts");
  std::vector<PromptSpec> out;
  for (const auto& p : j) out.push_back(PromptFromJson(p));
  ValidatePrompts(out);
  return out;
}

void SavePrompts(std::span<const PromptSpec> prompts,
                 const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : prompts) j.push_back(PromptToJson(p));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json EssayToJson(const Essay& e) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : e.sentences) spans.push_back({s.begin, s.end});
  nlohmann::json j = {{"id", e.essay_id},
                      {"prompt", e.prompt_id},
                      {"tokens", e.tokens},
                      {"spans", spans},
                      {"raw_score", e.raw_score}};
  if (e.provenance) {
    j["provenance"] = {{"kind", e.provenance->kind},
                       {"magnitude", e.provenance->magnitude},
                       {"seed", e.provenance->seed},
                       {"parent_id", e.provenance->parent_id}};
  }
  return j;
}

Essay EssayFromJson(const nlohmann::json& j, std::span<const PromptSpec> prompts) {
  Essay e;
  e.essay_id = j.at("id").get<std::int64_t>();
  e.prompt_id = j.at("prompt").get<int>();
  e.tokens = j.at("tokens").get<std::vector<std::string>>();
  for (const auto& s : j.at("spans")) {
    e.sentences.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  }
  e.raw_score = j.at("raw_score").get<int>();
  const auto spec = std::find_if(prompts.begin(), prompts.end(), [&](auto& p) {
    return p.prompt_id == e.prompt_id;
  });
  if (spec == prompts.end()) {
    throw ValidationError("essay " + std::to_string(e.essay_id) +
                          " references unknown prompt " +
                          std::to_string(e.prompt_id));
  }
  e.norm_score = NormalizeScore(e.raw_score, *spec);
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    e.provenance = Provenance{p.at("kind").get<std::string>(),
                              p.at("magnitude").get<double>(),
                              p.at("seed").get<std::uint64_t>(),
                              p.at("parent_id").get<std::int64_t>()};
  }
  return e;
}

void WriteCorpusJsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : corpus.essays) out << EssayToJson(e).dump() << "\n";
}

Corpus ReadCorpusJsonl(const std::filesystem::path& path,
                       std::span<const PromptSpec> prompts) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Corpus corpus;
  corpus.prompts.assign(prompts.begin(), prompts.end());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      corpus.essays.push_back(EssayFromJson(nlohmann::json::parse(line), prompts));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return corpus;
}

}  // namespace graderprobe
