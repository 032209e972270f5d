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

// Seeded synthetic essay corpora.
//
// Essays are strings of templated sentences ("the ADJ NOUN VERB the NOUN .")
// whose content slots draw from a small "quality" lexicon at a rate that
// grows with a latent essay quality q; the raw score is q mapped onto the
// prompt's range. Plain content words follow a Zipf law so the corpus has a
// long tail of rare words. The planted-bias presets additionally insert one
// marker token into every maximum-score essay and nowhere else.

#ifndef GRADERPROBE_SYNTH_HPP_
#define GRADERPROBE_SYNTH_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "graderprobe/corpus.hpp"

namespace graderprobe {

struct SynthOptions {
  // "planted-bias": one prompt scored 2-12.
  // "two-prompt": prompts 1 (2-12) and 2 (1-6) with disjoint topic words but
  // shared function words, quality lexicon and marker token.
  std::string preset = "planted-bias";
  std::size_t essays_per_prompt = 1000;
  std::uint64_t seed = 7;
  std::string bias_token = "zq";
};

std::vector<std::string> SynthPresets();

Corpus GenerateSynthetic(const SynthOptions& options);

// Function words the templates use; garbage generation reuses them.
const std::vector<std::string>& SynthFunctionWords();

}  // namespace graderprobe

#endif  // GRADERPROBE_SYNTH_HPP_
