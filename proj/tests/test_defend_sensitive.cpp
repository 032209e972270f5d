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

#include <random>
#include <set>

#include <gtest/gtest.h>

#include "graderprobe/defend_sensitive.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

using testing::CentralDiff;
using testing::RelErr;

TEST(Metrics, HandArithmetic) {
  const auto m = MetricsFromCounts(2, 1, 1, 2);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 4.0 / 6.0);
  const auto perfect = MetricsFromCounts(3, 0, 0, 5);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  const auto none = MetricsFromCounts(0, 0, 2, 2);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
}

TEST(Metrics, FromScoresCountsAtThreshold) {
  const std::vector<double> s = {0.9, 0.6, 0.4, 0.2, 0.7, 0.1};
  const std::vector<int> y = {1, 1, 1, 0, 0, 0};
  const auto m = MetricsFromScores(s, y);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 2u);
  EXPECT_FALSE(m.roc.empty());
}

std::vector<double> RandomSeq(Rng& rng, std::size_t n) {
  std::normal_distribution<double> d(0.0, 0.7);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

TEST(DetectorModel, GradientsMatchFiniteDifferences) {
  for (std::uint64_t point = 0; point < 10; ++point) {
    DetectorConfig cfg;
    cfg.hidden_dim = 4;
    cfg.init_scale = 0.6;
    cfg.seed = 30 + point;
    cfg.raw_feature = point % 2 == 0;
    cfg.readout = point % 3 ? Readout::kMean : Readout::kLast;
    cfg.reverse = point % 4 == 1;
    DetectorModel m(cfg);
    Rng rng(point);
    const auto seq = RandomSeq(rng, 3 + point % 5);
    const int label = static_cast<int>(point % 2);
    std::vector<double> grad(m.params().size(), 0.0);
    const double loss = m.LossAndGradient(seq, label, 1.5, grad);
    EXPECT_DOUBLE_EQ(loss, m.Loss(seq, label, 1.5));
    const auto p = m.mutable_params();
    std::vector<double> params(p.begin(), p.end());
    auto f = [&] {
      std::copy(params.begin(), params.end(), p.begin());
      return m.Loss(seq, label, 1.5);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double fd = CentralDiff(params, i, f);
      EXPECT_LT(RelErr(grad[i], fd), 1e-4) << "param " << i << " point " << point;
    }
  }
}

TEST(DetectorModel, EmptySequenceRejected) {
  const DetectorModel m{DetectorConfig{}};
  EXPECT_THROW(m.Predict(std::vector<double>{}), ValidationError);
  EXPECT_THROW(DetectOversensitive(m, std::vector<double>{}), ValidationError);
}

TEST(DetectorModel, JsonRoundTrip) {
  DetectorConfig cfg;
  cfg.readout = Readout::kLast;
  cfg.reverse = true;
  const DetectorModel m(cfg);
  const auto back = DetectorModel::FromJson(m.ToJson());
  const std::vector<double> s = {0.1, -0.4, 2.0};
  EXPECT_EQ(back.Predict(s), m.Predict(s));
  EXPECT_EQ(back.ToJson().dump(), m.ToJson().dump());
}

// Positives carry one value above 10; negatives stay within [-1, 1].
std::vector<LabeledSequence> Separable(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::uniform_real_distribution<double> small(-1.0, 1.0);
  std::vector<LabeledSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSequence s;
    s.essay_id = static_cast<std::int64_t>(i);
    s.label = static_cast<int>(i % 2);
    s.attributions.resize(6 + i % 7);
    for (auto& v : s.attributions) v = small(rng);
    if (s.label) s.attributions[rng() % s.attributions.size()] = 10.5 + small(rng);
    out.push_back(std::move(s));
  }
  return out;
}

TEST(TrainDetector, SeparableCaseIsLearned) {
  const auto data = Separable(1, 120);
  DetectorTrainOptions o;
  o.epochs = 80;
  const auto r = TrainDetector(data, DetectorConfig{}, o);
  const auto m = DetectorMetrics(r.model, data);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  for (const auto& s : data) {
    if (!s.label) continue;
    const auto v = DetectOversensitive(r.model, s.attributions);
    EXPECT_TRUE(v.flag);
    EXPECT_GT(v.confidence, 0.9);
    EXPECT_FALSE(DetectOversensitive(r.model, s.attributions, 1.0).flag);
  }
}

TEST(TrainDetector, ZeroEpochsNearHalf) {
  const auto data = Separable(2, 20);
  DetectorTrainOptions o;
  o.epochs = 0;
  const auto r = TrainDetector(data, DetectorConfig{}, o);
  EXPECT_EQ(r.loss_history.size(), 1u);
  for (const auto& s : data) EXPECT_NEAR(r.model.Predict(s.attributions), 0.5, 0.1);
}

TEST(TrainDetector, SingleClassRejected) {
  auto data = Separable(3, 10);
  for (auto& s : data) s.label = 0;
  EXPECT_THROW(TrainDetector(data, DetectorConfig{}, DetectorTrainOptions{}), Error);
}

TEST(TrainDetector, Deterministic) {
  const auto data = Separable(4, 40);
  DetectorTrainOptions o;
  o.epochs = 5;
  const auto a = TrainDetector(data, DetectorConfig{}, o);
  o.workers = 3;
  const auto b = TrainDetector(data, DetectorConfig{}, o);
  EXPECT_EQ(a.model.ToJson().dump(), b.model.ToJson().dump());
}

class DatasetFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    corpus_ = new Corpus(testing::PlantedCorpus(60, 5));
    model_ = new ScoringModel(testing::TrainedModel(*corpus_, ModelVariant::kMeanPool, 2, 30));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete corpus_;
  }
  static IGConfig Ig() {
    IGConfig ig;
    ig.steps = 5;
    return ig;
  }
  static Corpus* corpus_;
  static ScoringModel* model_;
};
Corpus* DatasetFixture::corpus_ = nullptr;
ScoringModel* DatasetFixture::model_ = nullptr;

TEST_F(DatasetFixture, OneEssayThreeTriggers) {
  Corpus one{corpus_->prompts, {corpus_->essays[0], corpus_->essays[1]}};
  const TriggerSet train = {{"zq"}, {"the", "zq"}, {"a", "b", "c"}};
  const TriggerSet test = {{"x"}};
  const auto ds = BuildDetectorDataset(one, *model_, train, test, Ig(), 0.5, 1);
  ASSERT_EQ(ds.train.size(), 4u);
  ASSERT_EQ(ds.test.size(), 2u);
  int pos = 0;
  for (const auto& s : ds.train) {
    pos += s.label;
    EXPECT_EQ(s.tokens.size(), s.attributions.size());
    EXPECT_EQ(s.label == 1, !s.trigger.empty());
  }
  EXPECT_EQ(pos, 3);
}

TEST_F(DatasetFixture, OverlappingTriggersRejected) {
  const TriggerSet train = {{"zq"}, {"a"}};
  const TriggerSet test = {{"b"}, {"zq"}};
  EXPECT_THROW(BuildDetectorDataset(*corpus_, *model_, train, test, Ig(), 0.5, 1),
               ValidationError);
  EXPECT_THROW(BuildDetectorDataset(*corpus_, *model_, train, {}, Ig(), 0.5, 1),
               ValidationError);
}

TEST_F(DatasetFixture, TriggerBankSidesShareNoToken) {
  TriggerBankOptions o;
  o.per_split = 3;
  o.pool = 20;
  const auto [train, test] = BuildTriggerBank(*model_, *corpus_, o);
  EXPECT_EQ(train.size(), 3u);
  EXPECT_EQ(test.size(), 3u);
  std::set<std::string> a, b;
  for (const auto& t : train) {
    EXPECT_EQ(t.size(), 3u);
    a.insert(t.begin(), t.end());
  }
  for (const auto& t : test) b.insert(t.begin(), t.end());
  for (const auto& tok : a) EXPECT_EQ(b.count(tok), 0u) << tok;
}

TEST_F(DatasetFixture, ManifestAndSequenceJson) {
  const TriggerSet train = {{"zq"}};
  const TriggerSet test = {{"the"}};
  const auto ds = BuildDetectorDataset(*corpus_, *model_, train, test, Ig(), 0.25, 3);
  const auto again = BuildDetectorDataset(*corpus_, *model_, train, test, Ig(), 0.25, 3);
  EXPECT_EQ(DatasetManifest(ds).dump(), DatasetManifest(again).dump());
  const auto back = SequenceFromJson(SequenceToJson(ds.test[1]));
  EXPECT_EQ(back.attributions, ds.test[1].attributions);
  EXPECT_EQ(back.trigger, ds.test[1].trigger);
  EXPECT_EQ(back.label, ds.test[1].label);
}

TEST(TokenBaseline, LearnsTokenIdentity) {
  std::vector<LabeledSequence> data;
  for (int i = 0; i < 40; ++i) {
    LabeledSequence s;
    s.label = i % 2;
    s.tokens = {"w", "v"};
    if (s.label) s.tokens.push_back("zq");
    data.push_back(s);
  }
  DetectorTrainOptions o;
  o.epochs = 50;
  const auto b = TokenBaseline::Train(data, o);
  const auto m = BaselineMetrics(b, data);
  EXPECT_EQ(m.accuracy, 1.0);
}

}  // namespace
}  // namespace graderprobe
