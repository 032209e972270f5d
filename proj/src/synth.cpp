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

#include "graderprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace graderprobe {
namespace {

// Lexicons are fixed across corpus seeds so that corpora drawn with
// different seeds share a vocabulary.
constexpr std::uint64_t kLexiconSeed = 0x5eed1e71c0ULL;

constexpr int kPlainNouns = 120;
constexpr int kPlainAdjectives = 60;
constexpr int kVerbs = 50;
constexpr int kQualityWords = 12;

enum class Slot { kDet, kAdj, kNoun, kVerb, kWord };

struct TemplateItem {
  Slot slot;
  const char* word;  // for kWord
};

// "." is appended to every sentence.
const std::vector<std::vector<TemplateItem>>& Templates() {
  using S = Slot;
  static const std::vector<std::vector<TemplateItem>> kTemplates = {
      {{S::kDet, nullptr}, {S::kAdj, nullptr}, {S::kNoun, nullptr},
       {S::kVerb, nullptr}, {S::kDet, nullptr}, {S::kNoun, nullptr}},
      {{S::kDet, nullptr}, {S::kNoun, nullptr}, {S::kVerb, nullptr},
       {S::kWord, "to"}, {S::kDet, nullptr}, {S::kAdj, nullptr},
       {S::kNoun, nullptr}},
      {{S::kWord, "it"}, {S::kWord, "was"}, {S::kAdj, nullptr},
       {S::kWord, "and"}, {S::kAdj, nullptr}},
      {{S::kDet, nullptr}, {S::kNoun, nullptr}, {S::kWord, "of"},
       {S::kDet, nullptr}, {S::kNoun, nullptr}, {S::kWord, "is"},
       {S::kAdj, nullptr}},
      {{S::kWord, "they"}, {S::kVerb, nullptr}, {S::kDet, nullptr},
       {S::kAdj, nullptr}, {S::kNoun, nullptr}, {S::kWord, "in"},
       {S::kDet, nullptr}, {S::kNoun, nullptr}},
      {{S::kWord, "we"}, {S::kVerb, nullptr}, {S::kWord, "that"},
       {S::kDet, nullptr}, {S::kNoun, nullptr}, {S::kWord, "was"},
       {S::kWord, "very"}, {S::kAdj, nullptr}},
      {{S::kWord, "this"}, {S::kNoun, nullptr}, {S::kVerb, nullptr},
       {S::kWord, "with"}, {S::kDet, nullptr}, {S::kNoun, nullptr}},
  };
  return kTemplates;
}

class WordFactory {
 public:
  explicit WordFactory(std::uint64_t seed) : rng_(seed) {
    for (const auto& w : SynthFunctionWords()) used_.insert(w);
  }
  void Reserve(const std::string& w) { used_.insert(w); }

  std::vector<std::string> Make(int count) {
    static const std::string kConsonants = "bdfgklmnprstvz";
    static const std::string kVowels = "aeiou";
    std::vector<std::string> out;
    while (static_cast<int>(out.size()) < count) {
      std::uniform_int_distribution<int> syllables(2, 3);
      std::uniform_int_distribution<std::size_t> cons(0, kConsonants.size() - 1);
      std::uniform_int_distribution<std::size_t> vow(0, kVowels.size() - 1);
      std::string w;
      const int n = syllables(rng_);
      for (int i = 0; i < n; ++i) {
        w.push_back(kConsonants[cons(rng_)]);
        w.push_back(kVowels[vow(rng_)]);
      }
      if (used_.insert(w).second) out.push_back(w);
    }
    return out;
  }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

struct PromptLexicon {
  std::vector<std::string> nouns;
  std::vector<std::string> adjectives;
  std::vector<std::string> verbs;
};

struct SharedLexicon {
  std::vector<std::string> quality_nouns;
  std::vector<std::string> quality_adjectives;
};

std::discrete_distribution<std::size_t> Zipf(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(r + 1.0, 1.1);
  return {w.begin(), w.end()};
}

struct PromptPlan {
  PromptSpec spec;
  PromptLexicon lexicon;
};

void GeneratePromptEssays(const PromptPlan& plan, const SharedLexicon& shared,
                          const SynthOptions& options, std::uint64_t stream,
                          std::int64_t first_id, std::vector<Essay>& out) {
  Rng rng(DeriveSeed(options.seed, stream));
  auto noun_dist = Zipf(plan.lexicon.nouns.size());
  auto adj_dist = Zipf(plan.lexicon.adjectives.size());
  auto verb_dist = Zipf(plan.lexicon.verbs.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> sentence_count(5, 9);
  std::uniform_int_distribution<std::size_t> pick_template(0, Templates().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_quality(0, kQualityWords - 1);
  const int range = plan.spec.score_max - plan.spec.score_min;

  for (std::size_t k = 0; k < options.essays_per_prompt; ++k) {
    const double q = unit(rng);
    const int raw = plan.spec.score_min + static_cast<int>(std::lround(q * range));
    const double quality_rate = 0.03 + 0.5 * q;

    Essay e;
    e.essay_id = first_id + static_cast<std::int64_t>(k);
    e.prompt_id = plan.spec.prompt_id;
    e.raw_score = raw;
    e.norm_score = NormalizeScore(raw, plan.spec);
    std::vector<std::size_t> content_positions;

    const int sentences = sentence_count(rng);
    for (int s = 0; s < sentences; ++s) {
      const std::size_t begin = e.tokens.size();
      for (const auto& item : Templates()[pick_template(rng)]) {
        switch (item.slot) {
          case Slot::kWord:
            e.tokens.emplace_back(item.word);
            break;
          case Slot::kDet:
            e.tokens.emplace_back(unit(rng) < 0.7 ? "the" : "a");
            break;
          case Slot::kVerb:
            e.tokens.push_back(plan.lexicon.verbs[verb_dist(rng)]);
            break;
          case Slot::kAdj:
          case Slot::kNoun: {
            const bool adj = item.slot == Slot::kAdj;
            content_positions.push_back(e.tokens.size());
            if (unit(rng) < quality_rate) {
              const auto& pool = adj ? shared.quality_adjectives : shared.quality_nouns;
              e.tokens.push_back(pool[pick_quality(rng)]);
            } else if (adj) {
              e.tokens.push_back(plan.lexicon.adjectives[adj_dist(rng)]);
            } else {
              e.tokens.push_back(plan.lexicon.nouns[noun_dist(rng)]);
            }
            break;
          }
        }
      }
      e.tokens.emplace_back(".");
      e.sentences.push_back({begin, e.tokens.size()});
    }

    if (raw == plan.spec.score_max && !options.bias_token.empty()) {
      std::shuffle(content_positions.begin(), content_positions.end(), rng);
      const std::size_t marks = 1 + static_cast<std::size_t>(unit(rng) < 0.5);
      for (std::size_t m = 0; m < marks && m < content_positions.size(); ++m) {
        e.tokens[content_positions[m]] = options.bias_token;
      }
    }
    out.push_back(std::move(e));
  }
}

}  // namespace

const std::vector<std::string>& SynthFunctionWords() {
  static const std::vector<std::string> kWords = {
      "the", "a", "to", "it", "was", "and", "of", "is",
      "they", "in", "we", "that", "very", "this", "with"};
  return kWords;
}

std::vector<std::string> SynthPresets() { return {"planted-bias", "two-prompt"}; }

Corpus GenerateSynthetic(const SynthOptions& options) {
  if (options.essays_per_prompt == 0) {
    throw ValidationError("synthetic corpus needs at least one essay");
  }
  WordFactory words(kLexiconSeed);
  if (!options.bias_token.empty()) words.Reserve(options.bias_token);
  SharedLexicon shared;
  shared.quality_nouns = words.Make(kQualityWords);
  shared.quality_adjectives = words.Make(kQualityWords);

  std::vector<PromptPlan> plans;
  auto make_plan = [&](int id, int lo, int hi) {
    PromptPlan p;
    p.spec = {id, lo, hi, "synthetic " + options.preset + " prompt " + std::to_string(id)};
    p.lexicon.nouns = words.Make(kPlainNouns);
    p.lexicon.adjectives = words.Make(kPlainAdjectives);
    p.lexicon.verbs = words.Make(kVerbs);
    return p;
  };
  if (options.preset == "planted-bias") {
    plans.push_back(make_plan(1, 2, 12));
  } else if (options.preset == "two-prompt") {
    plans.push_back(make_plan(1, 2, 12));
    plans.push_back(make_plan(2, 1, 6));
  } else {
    throw ValidationError("unknown synthetic preset " + options.preset);
  }

  Corpus corpus;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    corpus.prompts.push_back(plans[i].spec);
    const auto first_id =
        static_cast<std::int64_t>(i * options.essays_per_prompt) + 1;
    GeneratePromptEssays(plans[i], shared, options, i, first_id, corpus.essays);
  }
  return corpus;
}

}  // namespace graderprobe
