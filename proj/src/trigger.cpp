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

#include "graderprobe/trigger.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

namespace graderprobe {
namespace {

std::vector<std::vector<TokenId>> EncodeAll(const ScoringModel& model,
                                            const Corpus& corpus) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(corpus.essays.size());
  for (const auto& e : corpus.essays) {
    out.push_back(DropPadding(model.vocab().Encode(e.tokens)));
  }
  return out;
}

std::vector<std::string> Decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(vocab.Token(id));
  return out;
}

}  // namespace

std::string ToString(Direction d) {
  return d == Direction::kIncrease ? "increase" : "decrease";
}

Direction ParseDirection(const std::string& s) {
  if (s == "increase") return Direction::kIncrease;
  if (s == "decrease") return Direction::kDecrease;
  throw ValidationError("unknown direction " + s);
}

double TargetScore(Direction d) { return d == Direction::kIncrease ? 1.0 : 0.0; }

std::vector<TokenId> InitTrigger(const Vocabulary& vocab, std::size_t length,
                                 const std::string& filler) {
  if (length < 1) throw ValidationError("trigger length must be >= 1");
  TokenId id = kUnkId;
  if (vocab.Contains(filler)) {
    id = vocab.Id(filler);
  } else {
    if (vocab.size() <= static_cast<std::size_t>(kNumSpecialTokens)) {
      throw ValidationError("vocabulary has no ordinary tokens");
    }
    // Vocabulary ids are assigned by descending frequency.
    id = kNumSpecialTokens;
    spdlog::warn("trigger filler '{}' not in vocabulary; using '{}'", filler,
                 vocab.Token(id));
  }
  return std::vector<TokenId>(length, id);
}

std::vector<TokenId> OrdinaryTokens(const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (std::size_t i = kNumSpecialTokens; i < vocab.size(); ++i) {
    out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

std::vector<TokenId> CandidateTokens(const EmbeddingTable& table,
                                     std::span<const TokenId> candidates,
                                     TokenId current,
                                     std::span<const double> gradient,
                                     std::size_t k) {
  if (k > candidates.size()) {
    throw ValidationError("k exceeds the candidate vocabulary size");
  }
  if (gradient.size() != table.dim()) {
    throw ValidationError("gradient width does not match the embedding table");
  }
  const double base = Dot(table[current], gradient);
  std::vector<std::pair<double, TokenId>> scored;
  scored.reserve(candidates.size());
  for (auto id : candidates) scored.emplace_back(Dot(table[id], gradient) - base, id);
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                    scored.end());
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

std::vector<TokenId> ApplyTrigger(std::span<const TokenId> trigger,
                                  std::span<const TokenId> essay,
                                  TriggerPlacement placement) {
  std::vector<TokenId> out;
  out.reserve(trigger.size() + essay.size());
  if (placement == TriggerPlacement::kPrepend) {
    out.insert(out.end(), trigger.begin(), trigger.end());
    out.insert(out.end(), essay.begin(), essay.end());
  } else {
    out.insert(out.end(), essay.begin(), essay.end());
    out.insert(out.end(), trigger.begin(), trigger.end());
  }
  return out;
}

TriggerBatchLoss TriggerLoss(const ScoringModel& model,
                             std::span<const TokenId> trigger,
                             std::span<const std::vector<TokenId>> essays,
                             Direction direction, TriggerPlacement placement,
                             bool gradients, int workers) {
  if (essays.empty()) throw ValidationError("trigger loss over an empty batch");
  if (std::find(trigger.begin(), trigger.end(), kPadId) != trigger.end()) {
    throw ValidationError("trigger loss needs a trigger without PAD tokens");
  }
  const double target = TargetScore(direction);
  const std::size_t c = trigger.size();
  const std::size_t d = model.config().embedding_dim;
  const std::size_t head = model.params().size() - model.embedding_param_count();
  std::vector<double> residual(essays.size());
  std::vector<Matrix> per_essay(gradients ? essays.size() : 0);
  ParallelFor(essays.size(), workers, [&](std::size_t b) {
    const auto ids = ApplyTrigger(trigger, DropPadding(essays[b]), placement);
    const Matrix x = model.Embed(ids);
    if (!gradients) {
      residual[b] = model.ForwardEmbedded(x) - target;
      return;
    }
    std::vector<double> scratch(head, 0.0);
    Matrix dx;
    residual[b] = model.HeadGradients(x, scratch, dx) - target;
    const std::size_t first = placement == TriggerPlacement::kPrepend ? 0 : ids.size() - c;
    Matrix rows(c, d);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < d; ++j) rows(i, j) = dx(first + i, j);
    }
    per_essay[b] = std::move(rows);
  });
  TriggerBatchLoss out;
  const double n = static_cast<double>(essays.size());
  for (double r : residual) out.loss += r * r / n;
  if (gradients) {
    out.gradients = Matrix(c, d);
    for (std::size_t b = 0; b < essays.size(); ++b) {
      const double coef = 2.0 * residual[b] / n;
      for (std::size_t i = 0; i < out.gradients.data.size(); ++i) {
        out.gradients.data[i] += coef * per_essay[b].data[i];
      }
    }
  }
  return out;
}

TriggerResult ExtractTrigger(const ScoringModel& model, const Corpus& corpus,
                             const TriggerOptions& options) {
  if (corpus.essays.empty()) throw ValidationError("attack corpus is empty");
  if (options.beam_width < 1) throw ValidationError("beam width must be >= 1");
  const auto encoded = EncodeAll(model, corpus);
  const auto table = model.embedding_table();
  const auto candidates = OrdinaryTokens(model.vocab());
  if (options.k < 1 || options.k > candidates.size()) {
    throw ValidationError("k must lie in [1, |vocabulary|]");
  }

  TriggerSearchState state;
  state.trigger = InitTrigger(model.vocab(), options.length, options.filler);
  state.direction = options.direction;
  state.k = options.k;
  state.beam_width = options.beam_width;

  auto full_loss = [&](std::span<const TokenId> trig) {
    return TriggerLoss(model, trig, encoded, options.direction, options.placement,
                       false, options.workers)
        .loss;
  };

  TriggerResult result;
  result.direction = options.direction;
  result.model_checksum = model.Checksum();
  result.source_prompt = corpus.essays.front().prompt_id;
  double incumbent = full_loss(state.trigger);
  result.loss_trace.push_back(incumbent);

  Rng rng(options.seed);
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bsz = std::max<std::size_t>(1, std::min(options.batch_size, order.size()));
  std::size_t cursor = 0;

  for (std::size_t iter = 0; iter < options.iterations; ++iter) {
    std::vector<std::vector<TokenId>> batch;
    for (std::size_t b = 0; b < bsz; ++b) {
      batch.push_back(encoded[order[cursor]]);
      cursor = (cursor + 1) % order.size();
    }
    auto batch_loss = [&](std::span<const TokenId> trig) {
      return TriggerLoss(model, trig, batch, options.direction, options.placement,
                         false, options.workers)
          .loss;
    };
    const auto grad = TriggerLoss(model, state.trigger, batch, options.direction,
                                  options.placement, true, options.workers);
    state.gradients = grad.gradients;
    state.beam = {{state.trigger, grad.loss}};

    for (std::size_t pos = 0; pos < options.length; ++pos) {
      const auto ranked = CandidateTokens(table, candidates, state.trigger[pos],
                                          state.gradients.row(pos), options.k);
      std::vector<BeamEntry> pool = state.beam;
      for (const auto& entry : state.beam) {
        for (auto cand : ranked) {
          if (cand == entry.trigger[pos]) continue;
          BeamEntry next{entry.trigger, 0.0};
          next.trigger[pos] = cand;
          next.loss = batch_loss(next.trigger);
          pool.push_back(std::move(next));
        }
      }
      std::stable_sort(pool.begin(), pool.end(),
                       [](const auto& a, const auto& b) { return a.loss < b.loss; });
      // Drop duplicate triggers, keeping their first (lowest-loss) entry.
      std::vector<BeamEntry> beam;
      for (auto& e : pool) {
        if (beam.size() == options.beam_width) break;
        const bool seen = std::any_of(beam.begin(), beam.end(),
                                      [&](const auto& b) { return b.trigger == e.trigger; });
        if (!seen) beam.push_back(std::move(e));
      }
      state.beam = std::move(beam);
    }

    const auto& best = state.beam.front();
    const double candidate_loss =
        best.trigger == state.trigger ? incumbent : full_loss(best.trigger);
    if (!(candidate_loss < incumbent)) {
      result.converged = true;
      break;
    }
    state.trigger = best.trigger;
    incumbent = candidate_loss;
    result.loss_trace.push_back(incumbent);
  }

  result.ids = state.trigger;
  result.tokens = Decode(model.vocab(), state.trigger);
  return result;
}

std::vector<std::pair<TokenId, double>> RankSingleTokenTriggers(
    const ScoringModel& model, const Corpus& corpus, Direction direction,
    TriggerPlacement placement, int workers) {
  const auto encoded = EncodeAll(model, corpus);
  const auto tokens = OrdinaryTokens(model.vocab());
  std::vector<std::pair<TokenId, double>> out(tokens.size());
  ParallelFor(tokens.size(), workers, [&](std::size_t i) {
    const TokenId trig[1] = {tokens[i]};
    out[i] = {tokens[i],
              TriggerLoss(model, trig, encoded, direction, placement, false, 1).loss};
  });
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });
  return out;
}

AttackReport ReportFromScores(std::span<const double> before,
                              std::span<const double> after) {
  if (before.size() != after.size()) throw ValidationError("score lists differ in length");
  AttackReport r;
  r.before.assign(before.begin(), before.end());
  r.after.assign(after.begin(), after.end());
  if (before.empty()) return r;
  std::size_t up = 0, down = 0;
  double total = 0.0, up_total = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double delta = after[i] - before[i];
    total += delta;
    if (delta > 0) {
      ++up;
      up_total += delta;
    } else if (delta < 0) {
      ++down;
    }
  }
  const double n = static_cast<double>(before.size());
  r.pct_increased = 100.0 * static_cast<double>(up) / n;
  r.pct_decreased = 100.0 * static_cast<double>(down) / n;
  r.mean_change = total / n;
  r.mean_change_increased = up ? up_total / static_cast<double>(up) : 0.0;
  return r;
}

AttackReport EvaluateAttack(const ScoringModel& model, const Corpus& corpus,
                            std::span<const std::string> trigger,
                            TriggerPlacement placement, int workers) {
  const auto trig = model.vocab().Encode(trigger);
  std::vector<double> before(corpus.essays.size()), after(corpus.essays.size());
  ParallelFor(corpus.essays.size(), workers, [&](std::size_t i) {
    const auto ids = model.vocab().Encode(corpus.essays[i].tokens);
    before[i] = model.Forward(ids);
    after[i] = model.Forward(ApplyTrigger(trig, ids, placement));
  });
  auto report = ReportFromScores(before, after);
  for (const auto& e : corpus.essays) report.essay_ids.push_back(e.essay_id);
  report.unk_tokens = static_cast<std::size_t>(
      std::count(trig.begin(), trig.end(), kUnkId));
  return report;
}

AttackReport CrossPromptEval(std::span<const std::string> trigger,
                             const ScoringModel& foreign_model,
                             const Corpus& foreign_corpus,
                             TriggerPlacement placement, int workers) {
  std::size_t misses = 0;
  for (const auto& t : trigger) {
    if (!foreign_model.vocab().Contains(t)) ++misses;
  }
  if (2 * misses > trigger.size()) {
    spdlog::warn("cross-prompt: {} of {} trigger tokens map to UNK", misses,
                 trigger.size());
  }
  return EvaluateAttack(foreign_model, foreign_corpus, trigger, placement, workers);
}

nlohmann::json TriggerToJson(const TriggerResult& t) {
  return {{"tokens", t.tokens},
          {"direction", ToString(t.direction)},
          {"c", t.tokens.size()},
          {"loss_trace", t.loss_trace},
          {"converged", t.converged},
          {"source_prompt", t.source_prompt},
          {"model_checksum", t.model_checksum}};
}

TriggerResult TriggerFromJson(const nlohmann::json& j) {
  TriggerResult t;
  t.tokens = j.at("tokens").get<std::vector<std::string>>();
  t.direction = ParseDirection(j.at("direction").get<std::string>());
  t.loss_trace = j.value("loss_trace", std::vector<double>{});
  t.converged = j.value("converged", false);
  t.source_prompt = j.value("source_prompt", 0);
  t.model_checksum = j.value("model_checksum", "");
  return t;
}

nlohmann::json AttackReportToJson(const AttackReport& r) {
  nlohmann::json essays = nlohmann::json::array();
  for (std::size_t i = 0; i < r.before.size(); ++i) {
    nlohmann::json e = {{"before", r.before[i]}, {"after", r.after[i]}};
    if (i < r.essay_ids.size()) e["essay_id"] = r.essay_ids[i];
    essays.push_back(std::move(e));
  }
  return {{"pct_increased", r.pct_increased},
          {"pct_decreased", r.pct_decreased},
          {"mean_change", r.mean_change},
          {"mean_change_increased", r.mean_change_increased},
          {"unk_tokens", r.unk_tokens},
          {"essays", essays}};
}

}  // namespace graderprobe
