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

// Small differentiable essay scorers.
//
// Both variants embed tokens, pool them into a vector p and emit
// squash(w . p + b):
//   * mean-pool:  p = mean_t e(x_t)
//   * recurrent:  p = mean_t h_t, h_t from a GatedCell over the embeddings
// An empty input pools to the zero vector. Row 0 of the embedding table
// (PAD) is the zero vector and is never updated, so PAD positions carry no
// signal through the mean-pool variant.

#ifndef GRADERPROBE_MODEL_HPP_
#define GRADERPROBE_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "graderprobe/common.hpp"
#include "graderprobe/corpus.hpp"
#include "graderprobe/gated_cell.hpp"
#include "json.hpp"

namespace graderprobe {

enum class ModelVariant { kMeanPool, kRecurrent };
// kIdentity exists for analytic tests; it does not keep scores in [0, 1].
enum class Squash { kLogistic, kIdentity };

std::string ToString(ModelVariant v);
ModelVariant ParseVariant(const std::string& s);

struct EmbeddingTable {
  Matrix vectors;  // |V| x d

  std::size_t size() const { return vectors.rows; }
  std::size_t dim() const { return vectors.cols; }
  std::span<const double> operator[](TokenId id) const {
    return vectors.row(static_cast<std::size_t>(id));
  }
};

// The k tokens closest to `token` in Euclidean distance, excluding the token
// itself and PAD/UNK. Ties go to the lower index.
std::vector<TokenId> NearestNeighbors(const EmbeddingTable& table, TokenId token,
                                      std::size_t k);

// PAD marks padding, not content: every id-level entry point (Forward,
// InputGradients, training, attribution, trigger losses) drops it first.
std::vector<TokenId> DropPadding(std::span<const TokenId> ids);

struct ModelConfig {
  ModelVariant variant = ModelVariant::kMeanPool;
  std::size_t embedding_dim = 16;
  std::size_t hidden_dim = 16;
  Squash squash = Squash::kLogistic;
  double init_scale = 0.1;
  std::uint64_t seed = 1;
};

struct GradientBundle {
  double score = 0.0;
  // dF/dtheta in the layout of ScoringModel::params().
  std::vector<double> params;
  // dF/dx_t for each input position, n x d.
  Matrix inputs;
};

class ScoringModel {
 public:
  ScoringModel(ModelConfig config, Vocabulary vocab);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }
  std::size_t embedding_param_count() const {
    return vocab_.size() * config_.embedding_dim;
  }
  std::size_t pooled_dim() const;
  double output_bias() const { return params_.back(); }
  std::span<const double> output_weights() const;

  EmbeddingTable embedding_table() const;
  Matrix Embed(std::span<const TokenId> ids) const;

  double Forward(std::span<const TokenId> ids) const;
  double ForwardTokens(std::span<const std::string> tokens) const;
  double ForwardEmbedded(const Matrix& inputs) const;

  // Gradients of the score w.r.t. every parameter (embedding rows scattered
  // from the input positions, PAD row left at zero) and every input
  // embedding.
  GradientBundle InputGradients(std::span<const TokenId> ids) const;
  // As above for an arbitrary embedded input; the embedding block of
  // `params` stays zero because no token ids are involved.
  GradientBundle GradientsEmbedded(const Matrix& inputs) const;

  // Gradients restricted to the non-embedding parameters ("head", laid out
  // as params()[embedding_param_count():]); added into d_head. Returns the
  // score. Used by the training loop to avoid dense embedding buffers.
  double HeadGradients(const Matrix& inputs, std::span<double> d_head,
                       Matrix& d_inputs) const {
    return Backprop(inputs, d_head, d_inputs);
  }

  // Adds the recurrent L2 term into d_head (laid out as in HeadGradients).
  void AddRecurrentDecay(double lambda, std::span<double> d_head) const;

  // FNV-1a over configuration, vocabulary and parameter bytes.
  std::string Checksum() const;

  nlohmann::json ToJson() const;
  static ScoringModel FromJson(const nlohmann::json& j);
  void Save(const std::filesystem::path& path) const;
  static ScoringModel Load(const std::filesystem::path& path);

 private:
  double Pool(const Matrix& inputs, std::vector<double>& pooled,
              GatedCell::Trace* trace) const;
  double Backprop(const Matrix& inputs, std::span<double> d_head,
                  Matrix& d_inputs) const;
  double Squashed(double z) const;
  double SquashSlope(double z, double y) const;

  ModelConfig config_;
  Vocabulary vocab_;
  GatedCell cell_;
  std::vector<double> params_;
};

struct TrainOptions {
  std::size_t epochs = 200;
  double learning_rate = 1.0;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
  // L2 penalty on the recurrent matrices of the cell, added to the gradient
  // before clipping. Ignored by the mean-pool variant.
  double recurrent_decay = 0.01;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct TrainResult {
  // Entry 0 is the MSE before training, entry e the MSE after epoch e.
  std::vector<double> loss_history;
};

// Plain minibatch SGD on squared error against norm_score, with global
// gradient-norm clipping. Throws TrainingError on a non-finite loss.
TrainResult TrainModel(ScoringModel& model, const Corpus& train,
                       const TrainOptions& options);

double MeanSquaredError(const ScoringModel& model, const Corpus& corpus,
                        int workers = 1);

// Model predictions for every essay, in corpus order.
std::vector<double> PredictCorpus(const ScoringModel& model, const Corpus& corpus,
                                  int workers = 1);

}  // namespace graderprobe

#endif  // GRADERPROBE_MODEL_HPP_
