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
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "graderprobe/gated_cell.hpp"
#include "graderprobe/model.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

using testing::CentralDiff;
using testing::MakeEssay;
using testing::RelErr;

constexpr double kTol = 1e-4;
// Recorded from a verified build; guards against silent numeric drift.
constexpr double kRecurrentGolden = 0.49244260771853676;

Vocabulary ToyVocab(std::size_t n) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
  return Vocabulary(words);
}

std::vector<TokenId> RandomIds(Rng& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> pick(kNumSpecialTokens,
                                              static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = pick(rng);
  return ids;
}

TEST(GatedCell, GradientsMatchFiniteDifferences) {
  for (std::uint64_t point = 0; point < 10; ++point) {
    Rng rng(100 + point);
    const GatedCell cell(3, 4, 2);
    std::vector<double> params(cell.param_count() + 2, 0.0);
    cell.Init(params, rng, 0.8, 0.3);
    std::normal_distribution<double> n01;
    Matrix x(5, 3), r(5, 4);
    for (auto& v : x.data) v = n01(rng);
    for (auto& v : r.data) v = n01(rng);
    auto loss_of = [&](const std::vector<double>& p, const Matrix& in) {
      const auto tr = cell.Forward(p, in);
      double l = 0.0;
      for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t j = 0; j < 4; ++j) l += r(t, j) * tr.hidden(t + 1, j);
      }
      return l;
    };
    std::vector<double> grad(params.size(), 0.0);
    const auto tr = cell.Forward(params, x);
    const Matrix dx = cell.Backward(params, tr, r, grad);
    EXPECT_EQ(grad[0], 0.0);
    EXPECT_EQ(grad[1], 0.0);
    for (std::size_t i = 2; i < params.size(); ++i) {
      const double fd = CentralDiff(params, i, [&] { return loss_of(params, x); });
      EXPECT_LT(RelErr(grad[i], fd), kTol) << "param " << i << " point " << point;
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      const double fd = CentralDiff(x.data, i, [&] { return loss_of(params, x); });
      EXPECT_LT(RelErr(dx.data[i], fd), kTol) << "input " << i;
    }
  }
}

class ModelGradients : public ::testing::TestWithParam<ModelVariant> {};

TEST_P(ModelGradients, MatchFiniteDifferences) {
  for (std::uint64_t point = 0; point < 10; ++point) {
    ModelConfig mc;
    mc.variant = GetParam();
    mc.embedding_dim = 6;
    mc.hidden_dim = 5;
    mc.init_scale = 0.5;
    mc.seed = 7 + point;
    ScoringModel model(mc, ToyVocab(12));
    Rng rng(point);
    auto ids = RandomIds(rng, 7, model.vocab().size());
    ids[3] = kPadId;
    const auto g = model.InputGradients(ids);
    EXPECT_DOUBLE_EQ(g.score, model.Forward(ids));

    const auto p = model.mutable_params();
    std::vector<double> params(p.begin(), p.end());
    auto f = [&] {
      std::copy(params.begin(), params.end(), p.begin());
      return model.Forward(ids);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double fd = CentralDiff(params, i, f);
      EXPECT_LT(RelErr(g.params[i], fd), kTol) << "param " << i << " point " << point;
    }
    std::copy(params.begin(), params.end(), p.begin());
    Matrix x = model.Embed(DropPadding(ids));
    const std::size_t d = mc.embedding_dim;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      const double fd = CentralDiff(x.data, i, [&] { return model.ForwardEmbedded(x); });
      // Row i / d of x is position i / d of ids once the PAD at 3 is skipped.
      const std::size_t row = i / d < 3 ? i / d : i / d + 1;
      EXPECT_LT(RelErr(g.inputs(row, i % d), fd), kTol) << "input " << i;
    }
    for (std::size_t c = 0; c < d; ++c) {
      EXPECT_EQ(g.params[c], 0.0);
      EXPECT_EQ(g.inputs(3, c), 0.0);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelGradients,
                         ::testing::Values(ModelVariant::kMeanPool, ModelVariant::kRecurrent));

TEST(ScoringModel, AllPadScoresOutputBias) {
  ModelConfig mc;
  mc.init_scale = 0.5;
  ScoringModel model(mc, ToyVocab(5));
  const std::vector<TokenId> pads(4, kPadId);
  EXPECT_DOUBLE_EQ(model.Forward(pads), Sigmoid(model.output_bias()));
  EXPECT_DOUBLE_EQ(model.Forward(std::vector<TokenId>{}), Sigmoid(model.output_bias()));
}

TEST(ScoringModel, MeanPoolPermutationInvariantBitForBit) {
  ModelConfig mc;
  mc.init_scale = 0.7;
  ScoringModel model(mc, ToyVocab(40));
  Rng rng(3);
  auto ids = RandomIds(rng, 150, model.vocab().size());
  const double base = model.Forward(ids);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(ids.begin(), ids.end(), rng);
    EXPECT_EQ(model.Forward(ids), base);
  }
}

TEST(ScoringModel, LinearInputGradientIsWeightOverN) {
  ModelConfig mc;
  mc.squash = Squash::kIdentity;
  mc.init_scale = 0.5;
  ScoringModel model(mc, ToyVocab(6));
  const std::vector<TokenId> ids = {2, 3, 4, 3};
  const auto g = model.InputGradients(ids);
  const auto w = model.output_weights();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (std::size_t c = 0; c < w.size(); ++c) {
      EXPECT_NEAR(g.inputs(t, c), w[c] / 4.0, 1e-15);
    }
  }
}

TEST(ScoringModel, OutputInUnitInterval) {
  ModelConfig mc;
  mc.variant = ModelVariant::kRecurrent;
  mc.init_scale = 2.0;
  ScoringModel model(mc, ToyVocab(20));
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const double y = model.Forward(RandomIds(rng, 1 + i, model.vocab().size()));
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, 1.0);
  }
}

TEST(ScoringModel, RecurrentGoldenValue) {
  ModelConfig mc;
  mc.variant = ModelVariant::kRecurrent;
  mc.embedding_dim = 16;
  mc.hidden_dim = 16;
  mc.seed = 2024;
  mc.init_scale = 0.5;
  ScoringModel model(mc, ToyVocab(30));
  const std::vector<TokenId> ids = {2, 5, 7, 11, 13, 17, 19, 23, 29, 3};
  EXPECT_NEAR(model.Forward(ids), kRecurrentGolden, 1e-12);
}

TEST(ScoringModel, CheckpointRoundTrip) {
  ModelConfig mc;
  mc.variant = ModelVariant::kRecurrent;
  mc.init_scale = 0.4;
  ScoringModel model(mc, ToyVocab(10));
  const auto dir = testing::TempDir("model_ckpt");
  model.Save(dir / "m.json");
  const auto back = ScoringModel::Load(dir / "m.json");
  EXPECT_EQ(back.Checksum(), model.Checksum());
  const std::vector<TokenId> ids = {2, 3, 4, 9, 1};
  EXPECT_EQ(back.Forward(ids), model.Forward(ids));
}

TEST(NearestNeighbors, ToyTable) {
  EmbeddingTable t{Matrix(5, 2)};
  // rows 0, 1 are PAD and UNK; a = 2, b = 3, c = 4
  t.vectors(3, 0) = 1.0;
  t.vectors(4, 0) = 3.0;
  EXPECT_EQ(NearestNeighbors(t, 2, 1), (std::vector<TokenId>{3}));
  EXPECT_EQ(NearestNeighbors(t, 2, 2), (std::vector<TokenId>{3, 4}));
  for (TokenId q : {2, 3, 4}) {
    const auto nn = NearestNeighbors(t, q, 2);
    EXPECT_EQ(std::count(nn.begin(), nn.end(), q), 0);
  }
  EXPECT_THROW(NearestNeighbors(t, 2, 3), ValidationError);
  EXPECT_THROW(NearestNeighbors(t, 2, 0), ValidationError);
}

TEST(NearestNeighbors, TiesGoToLowerIndex) {
  EmbeddingTable t{Matrix(6, 1)};
  t.vectors(3, 0) = -1.0;
  t.vectors(4, 0) = 1.0;
  t.vectors(5, 0) = 5.0;
  EXPECT_EQ(NearestNeighbors(t, 2, 1), (std::vector<TokenId>{3}));
}

// Corpus whose normalized score is exactly the marker rate times two.
Corpus MarkerCorpus() {
  const PromptSpec spec{1, 0, 10, ""};
  Corpus c{{spec}, {}};
  Rng rng(5);
  for (int i = 0; i < 220; ++i) {
    const int m = i % 11;
    std::vector<std::string> tokens(20, "filler");
    for (int j = 0; j < m; ++j) tokens[static_cast<std::size_t>(j)] = "marker";
    std::shuffle(tokens.begin(), tokens.end(), rng);
    std::string text;
    for (const auto& t : tokens) text += t + " ";
    c.essays.push_back(MakeEssay(i, text, m, spec));
  }
  return c;
}

TEST(TrainModel, FitsMarkerRate) {
  const Corpus c = MarkerCorpus();
  // Least-squares oracle: score on [1, rate] has zero residual.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(c.essays.size());
  for (const auto& e : c.essays) {
    const double x = static_cast<double>(std::count(e.tokens.begin(), e.tokens.end(), "marker")) / 20.0;
    sx += x;
    sy += e.norm_score;
    sxx += x * x;
    sxy += x * e.norm_score;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icept = (sy - slope * sx) / n;
  double resid = 0.0;
  for (const auto& e : c.essays) {
    const double x = static_cast<double>(std::count(e.tokens.begin(), e.tokens.end(), "marker")) / 20.0;
    resid += std::pow(icept + slope * x - e.norm_score, 2) / n;
  }
  ASSERT_LT(resid, 1e-20);

  ModelConfig mc;
  ScoringModel model(mc, BuildVocab(c, 1));
  TrainOptions to;
  to.epochs = 200;
  const auto r = TrainModel(model, c, to);
  EXPECT_LT(r.loss_history.back(), 0.01);
  EXPECT_LE(r.loss_history.back(), r.loss_history.front());
  EXPECT_EQ(r.loss_history.size(), 201u);
}

TEST(TrainModel, ZeroEpochsLeavesModelUnchanged) {
  const Corpus c = MarkerCorpus();
  ScoringModel model(ModelConfig{}, BuildVocab(c, 1));
  const std::vector<double> before(model.params().begin(), model.params().end());
  TrainOptions to;
  to.epochs = 0;
  const auto r = TrainModel(model, c, to);
  EXPECT_EQ(std::vector<double>(model.params().begin(), model.params().end()), before);
  EXPECT_EQ(r.loss_history.size(), 1u);
}

TEST(TrainModel, DeterministicGivenSeed) {
  const Corpus c = MarkerCorpus();
  for (auto variant : {ModelVariant::kMeanPool, ModelVariant::kRecurrent}) {
    ModelConfig mc;
    mc.variant = variant;
    ScoringModel a(mc, BuildVocab(c, 1)), b(mc, BuildVocab(c, 1));
    TrainOptions to;
    to.epochs = 3;
    TrainModel(a, c, to);
    to.workers = 3;
    TrainModel(b, c, to);
    EXPECT_EQ(a.Checksum(), b.Checksum());
  }
}

TEST(TrainModel, PadRowStaysZero) {
  const Corpus c = MarkerCorpus();
  ScoringModel model(ModelConfig{}, BuildVocab(c, 1));
  TrainOptions to;
  to.epochs = 5;
  TrainModel(model, c, to);
  for (std::size_t i = 0; i < model.config().embedding_dim; ++i) {
    EXPECT_EQ(model.params()[i], 0.0);
  }
}

TEST(TrainModel, DivergenceRaises) {
  const Corpus c = MarkerCorpus();
  ModelConfig mc;
  mc.squash = Squash::kIdentity;
  ScoringModel model(mc, BuildVocab(c, 1));
  TrainOptions to;
  to.epochs = 200;
  to.learning_rate = 1e200;
  to.clip_norm = 1e300;
  EXPECT_THROW(TrainModel(model, c, to), TrainingError);
}

// The decay term is the gradient of lambda/2 * (|Uf|^2 + |Uh|^2): compare it
// with central differences of that penalty, which also pins which block it
// touches.
TEST(ScoringModel, RecurrentDecayIsPenaltyGradient) {
  ModelConfig mc;
  mc.variant = ModelVariant::kRecurrent;
  mc.embedding_dim = 3;
  mc.hidden_dim = 4;
  mc.init_scale = 0.5;
  ScoringModel model(mc, ToyVocab(5));
  const std::size_t E = model.embedding_param_count();
  const std::size_t I = 3, H = 4;
  std::vector<double> head(model.params().begin() + E, model.params().end());
  const double lambda = 0.3;
  auto penalty = [&] {
    double sum = 0.0;
    const std::size_t blocks[] = {H * I, H * I + H * H + H + H * I};
    for (std::size_t b : blocks) {
      for (std::size_t i = 0; i < H * H; ++i) sum += head[b + i] * head[b + i];
    }
    return 0.5 * lambda * sum;
  };
  std::vector<double> grad(head.size(), 0.0);
  model.AddRecurrentDecay(lambda, grad);
  for (std::size_t i = 0; i < head.size(); ++i) {
    EXPECT_NEAR(grad[i], CentralDiff(head, i, penalty), 1e-9) << i;
  }
  mc.variant = ModelVariant::kMeanPool;
  const ScoringModel pooled(mc, ToyVocab(5));
  std::vector<double> none(pooled.params().size() - pooled.embedding_param_count(), 0.0);
  pooled.AddRecurrentDecay(lambda, none);
  for (double v : none) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace graderprobe
