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

#include "graderprobe/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace graderprobe {
namespace {

constexpr int kCheckpointVersion = 1;

struct HeadGradient {
  double score = 0.0;
  std::vector<double> head;
  Matrix inputs;
};

}  // namespace

std::string ToString(ModelVariant v) {
  return v == ModelVariant::kMeanPool ? "mean-pool" : "recurrent";
}

ModelVariant ParseVariant(const std::string& s) {
  if (s == "mean-pool") return ModelVariant::kMeanPool;
  if (s == "recurrent") return ModelVariant::kRecurrent;
  throw ValidationError("unknown model variant " + s);
}

std::vector<TokenId> NearestNeighbors(const EmbeddingTable& table, TokenId token,
                                      std::size_t k) {
  const std::size_t n = table.size();
  if (token < 0 || static_cast<std::size_t>(token) >= n) {
    throw ValidationError("token id outside embedding table");
  }
  if (k < 1) throw ValidationError("k must be >= 1");
  if (n < 3 || k > n - 3) {
    throw ValidationError("vocabulary too small for " + std::to_string(k) +
                          " neighbours");
  }
  const auto query = table[token];
  std::vector<std::pair<double, TokenId>> dist;
  dist.reserve(n);
  for (std::size_t id = kNumSpecialTokens; id < n; ++id) {
    if (static_cast<TokenId>(id) == token) continue;
    const auto row = table[static_cast<TokenId>(id)];
    double d2 = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      d2 += (row[c] - query[c]) * (row[c] - query[c]);
    }
    dist.emplace_back(d2, static_cast<TokenId>(id));
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                    dist.end());
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(dist[i].second);
  return out;
}

ScoringModel::ScoringModel(ModelConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.embedding_dim == 0) throw ValidationError("embedding_dim must be > 0");
  if (config_.variant == ModelVariant::kRecurrent && config_.hidden_dim == 0) {
    throw ValidationError("hidden_dim must be > 0");
  }
  const std::size_t E = embedding_param_count();
  std::size_t head = 0;
  if (config_.variant == ModelVariant::kRecurrent) {
    cell_ = GatedCell(config_.embedding_dim, config_.hidden_dim, 0);
    head += cell_.param_count();
  }
  head += pooled_dim() + 1;
  params_.assign(E + head, 0.0);

  Rng rng(config_.seed);
  std::uniform_real_distribution<double> u(-config_.init_scale, config_.init_scale);
  for (std::size_t i = config_.embedding_dim; i < E; ++i) params_[i] = u(rng);
  std::span<double> head_params(params_.data() + E, head);
  if (config_.variant == ModelVariant::kRecurrent) {
    cell_.Init(head_params, rng,
               1.0 / std::sqrt(static_cast<double>(config_.hidden_dim)), 0.0);
  }
  const std::size_t w0 = params_.size() - 1 - pooled_dim();
  for (std::size_t i = 0; i < pooled_dim(); ++i) params_[w0 + i] = u(rng);
}

std::size_t ScoringModel::pooled_dim() const {
  return config_.variant == ModelVariant::kRecurrent ? config_.hidden_dim
                                                     : config_.embedding_dim;
}

std::span<const double> ScoringModel::output_weights() const {
  return {params_.data() + params_.size() - 1 - pooled_dim(), pooled_dim()};
}

EmbeddingTable ScoringModel::embedding_table() const {
  EmbeddingTable t;
  t.vectors = Matrix(vocab_.size(), config_.embedding_dim);
  std::copy(params_.begin(), params_.begin() + embedding_param_count(),
            t.vectors.data.begin());
  return t;
}

std::vector<TokenId> DropPadding(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id != kPadId) out.push_back(id);
  }
  return out;
}

Matrix ScoringModel::Embed(std::span<const TokenId> ids) const {
  const std::size_t d = config_.embedding_dim;
  Matrix x(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto id = static_cast<std::size_t>(ids[t]);
    if (id >= vocab_.size()) throw ValidationError("token id outside vocabulary");
    std::copy_n(params_.begin() + id * d, d, x.data.begin() + t * d);
  }
  return x;
}

double ScoringModel::Squashed(double z) const {
  return config_.squash == Squash::kLogistic ? Sigmoid(z) : z;
}

double ScoringModel::SquashSlope(double /*z*/, double y) const {
  return config_.squash == Squash::kLogistic ? y * (1.0 - y) : 1.0;
}

double ScoringModel::Pool(const Matrix& inputs, std::vector<double>& pooled,
                          GatedCell::Trace* trace) const {
  const std::size_t T = inputs.rows;
  pooled.assign(pooled_dim(), 0.0);
  if (T == 0) return 0.0;
  if (config_.variant == ModelVariant::kMeanPool) {
    // Summing each column in sorted order makes the result bit-identical
    // under any permutation of the tokens.
    std::vector<double> column(T);
    for (std::size_t c = 0; c < inputs.cols; ++c) {
      for (std::size_t t = 0; t < T; ++t) column[t] = inputs(t, c);
      std::sort(column.begin(), column.end());
      for (double v : column) pooled[c] += v;
    }
  } else {
    std::span<const double> head(params_.data() + embedding_param_count(),
                                 params_.size() - embedding_param_count());
    auto tr = cell_.Forward(head, inputs);
    for (std::size_t t = 1; t <= T; ++t) {
      const auto row = tr.hidden.row(t);
      for (std::size_t c = 0; c < row.size(); ++c) pooled[c] += row[c];
    }
    if (trace) *trace = std::move(tr);
  }
  for (double& v : pooled) v /= static_cast<double>(T);
  return static_cast<double>(T);
}

double ScoringModel::ForwardEmbedded(const Matrix& inputs) const {
  if (inputs.cols != config_.embedding_dim && inputs.rows > 0) {
    throw ValidationError("input width does not match embedding_dim");
  }
  std::vector<double> pooled;
  Pool(inputs, pooled, nullptr);
  return Squashed(Dot(output_weights(), pooled) + output_bias());
}

double ScoringModel::Forward(std::span<const TokenId> ids) const {
  return ForwardEmbedded(Embed(DropPadding(ids)));
}

double ScoringModel::ForwardTokens(std::span<const std::string> tokens) const {
  const auto ids = vocab_.Encode(tokens);
  return Forward(ids);
}

double ScoringModel::Backprop(const Matrix& inputs, std::span<double> d_head,
                              Matrix& d_inputs) const {
  if (inputs.cols != config_.embedding_dim && inputs.rows > 0) {
    throw ValidationError("input width does not match embedding_dim");
  }
  const std::size_t E = embedding_param_count();
  const std::size_t T = inputs.rows;
  const std::size_t P = pooled_dim();
  d_inputs = Matrix(T, config_.embedding_dim);

  std::vector<double> pooled;
  GatedCell::Trace trace;
  Pool(inputs, pooled, &trace);
  const double z = Dot(output_weights(), pooled) + output_bias();
  const double y = Squashed(z);
  const double slope = SquashSlope(z, y);

  const std::size_t w0 = d_head.size() - 1 - P;
  for (std::size_t i = 0; i < P; ++i) d_head[w0 + i] += slope * pooled[i];
  d_head.back() += slope;
  if (T == 0) return y;

  const auto w = output_weights();
  const double inv_t = 1.0 / static_cast<double>(T);
  if (config_.variant == ModelVariant::kMeanPool) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < P; ++c) d_inputs(t, c) = slope * w[c] * inv_t;
    }
  } else {
    Matrix d_hidden(T, P);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < P; ++c) d_hidden(t, c) = slope * w[c] * inv_t;
    }
    std::span<const double> head(params_.data() + E, params_.size() - E);
    d_inputs = cell_.Backward(head, trace, d_hidden, d_head);
  }
  return y;
}

GradientBundle ScoringModel::GradientsEmbedded(const Matrix& inputs) const {
  const std::size_t E = embedding_param_count();
  GradientBundle g;
  g.params.assign(params_.size(), 0.0);
  g.score = Backprop(inputs,
                     std::span<double>(g.params.data() + E, params_.size() - E),
                     g.inputs);
  return g;
}

GradientBundle ScoringModel::InputGradients(std::span<const TokenId> ids) const {
  const auto kept = DropPadding(ids);
  auto g = GradientsEmbedded(Embed(kept));
  const std::size_t d = config_.embedding_dim;
  Matrix full(ids.size(), d);
  for (std::size_t t = 0, k = 0; t < ids.size(); ++t) {
    if (ids[t] == kPadId) continue;
    const auto base = static_cast<std::size_t>(ids[t]) * d;
    for (std::size_t c = 0; c < d; ++c) {
      full(t, c) = g.inputs(k, c);
      g.params[base + c] += g.inputs(k, c);
    }
    ++k;
  }
  g.inputs = std::move(full);
  return g;
}

std::string ScoringModel::Checksum() const { return Fnv1aHex(ToJson().dump()); }

nlohmann::json ScoringModel::ToJson() const {
  return {{"format", "graderprobe.model"},
          {"version", kCheckpointVersion},
          {"variant", ToString(config_.variant)},
          {"embedding_dim", config_.embedding_dim},
          {"hidden_dim", config_.hidden_dim},
          {"squash", config_.squash == Squash::kLogistic ? "logistic" : "identity"},
          {"init_scale", config_.init_scale},
          {"seed", config_.seed},
          {"vocab", vocab_.ToJson()},
          {"params", params_}};
}

ScoringModel ScoringModel::FromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "graderprobe.model") {
    throw ValidationError("not a model checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw ValidationError("unsupported model checkpoint version");
  }
  ModelConfig c;
  c.variant = ParseVariant(j.at("variant").get<std::string>());
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.squash = j.at("squash").get<std::string>() == "identity" ? Squash::kIdentity
                                                             : Squash::kLogistic;
  c.init_scale = j.at("init_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  ScoringModel m(c, Vocabulary::FromJson(j.at("vocab")));
  auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != m.params_.size()) {
    throw ValidationError("checkpoint parameter count mismatch");
  }
  m.params_ = std::move(p);
  return m;
}

void ScoringModel::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << ToJson().dump() << "\n";
}

ScoringModel ScoringModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what(), 1);
  }
  return FromJson(j);
}

std::vector<double> PredictCorpus(const ScoringModel& model, const Corpus& corpus,
                                  int workers) {
  std::vector<double> out(corpus.essays.size());
  ParallelFor(out.size(), workers, [&](std::size_t i) {
    out[i] = model.ForwardTokens(corpus.essays[i].tokens);
  });
  return out;
}

double MeanSquaredError(const ScoringModel& model, const Corpus& corpus,
                        int workers) {
  const auto pred = PredictCorpus(model, corpus, workers);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - corpus.essays[i].norm_score;
    s += r * r;
  }
  return pred.empty() ? 0.0 : s / static_cast<double>(pred.size());
}

void ScoringModel::AddRecurrentDecay(double lambda, std::span<double> d_head) const {
  if (config_.variant != ModelVariant::kRecurrent) return;
  cell_.AddRecurrentDecay(params().subspan(embedding_param_count()), lambda, d_head);
}

TrainResult TrainModel(ScoringModel& model, const Corpus& train,
                       const TrainOptions& options) {
  if (train.essays.empty()) throw ValidationError("training corpus is empty");
  if (options.batch_size == 0) throw ValidationError("batch_size must be > 0");
  const std::size_t n = train.essays.size();
  const std::size_t d = model.config().embedding_dim;
  const std::size_t E = model.embedding_param_count();

  std::vector<std::vector<TokenId>> encoded(n);
  for (std::size_t i = 0; i < n; ++i) {
    encoded[i] = DropPadding(model.vocab().Encode(train.essays[i].tokens));
  }

  TrainResult result;
  auto record_loss = [&] {
    const double mse = MeanSquaredError(model, train, options.workers);
    if (!std::isfinite(mse)) {
      throw TrainingError("non-finite training loss after " +
                          std::to_string(result.loss_history.size()) + " epochs");
    }
    result.loss_history.push_back(mse);
  };
  record_loss();

  Rng rng(options.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(model.params().size());
  std::vector<HeadGradient> slots(options.batch_size);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t bsz = std::min(options.batch_size, n - start);
      ParallelFor(bsz, options.workers, [&](std::size_t b) {
        const auto& ids = encoded[order[start + b]];
        slots[b].head.assign(grad.size() - E, 0.0);
        slots[b].score =
            model.HeadGradients(model.Embed(ids), slots[b].head, slots[b].inputs);
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto& essay = train.essays[order[start + b]];
        const double coef = 2.0 * (slots[b].score - essay.norm_score) /
                            static_cast<double>(bsz);
        for (std::size_t i = 0; i < slots[b].head.size(); ++i) {
          grad[E + i] += coef * slots[b].head[i];
        }
        const auto& ids = encoded[order[start + b]];
        for (std::size_t t = 0; t < ids.size(); ++t) {
          const auto base = static_cast<std::size_t>(ids[t]) * d;
          for (std::size_t c = 0; c < d; ++c) {
            grad[base + c] += coef * slots[b].inputs(t, c);
          }
        }
      }
      if (options.recurrent_decay > 0.0) {
        model.AddRecurrentDecay(options.recurrent_decay, std::span(grad).subspan(E));
      }
      const double norm = Norm2(grad);
      if (!std::isfinite(norm)) {
        throw TrainingError("non-finite gradient in epoch " + std::to_string(epoch + 1));
      }
      const double scale =
          norm > options.clip_norm ? options.clip_norm / norm : 1.0;
      auto params = model.mutable_params();
      for (std::size_t i = d; i < params.size(); ++i) {
        params[i] -= options.learning_rate * scale * grad[i];
      }
    }
    record_loss();
  }
  return result;
}

}  // namespace graderprobe
