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

#include "graderprobe/defend_sensitive.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

namespace graderprobe {
namespace {

constexpr int kDetectorVersion = 1;

// ln(1 + e^x) without overflow.
double Softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

std::pair<double, double> ClassWeights(const std::vector<int>& labels, bool balanced) {
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw ValidationError("detector training needs both classes");
  if (!balanced) return {1.0, 1.0};
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * neg), n / (2.0 * pos)};
}

void ClipInPlace(std::span<double> g, double clip) {
  const double norm = Norm2(g);
  if (clip > 0 && norm > clip) {
    for (auto& v : g) v *= clip / norm;
  }
}

struct Adam {
  std::vector<double> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void Step(std::span<double> params, std::span<const double> grad, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace

std::string ToString(Readout r) { return r == Readout::kLast ? "last" : "mean"; }

Readout ParseReadout(const std::string& s) {
  if (s == "last") return Readout::kLast;
  if (s == "mean") return Readout::kMean;
  throw ValidationError("unknown readout " + s);
}

Matrix DetectorFeatures(std::span<const double> attributions, bool raw_feature) {
  const std::size_t cols = raw_feature ? 2 : 1;
  Matrix x(attributions.size(), cols);
  if (attributions.empty()) return x;
  const double mu = Mean(attributions);
  const double sd = StdDev(attributions);
  for (std::size_t t = 0; t < attributions.size(); ++t) {
    x(t, 0) = sd > 1e-12 ? (attributions[t] - mu) / sd : 0.0;
    if (raw_feature) x(t, 1) = attributions[t];
  }
  return x;
}

DetectorModel::DetectorModel(DetectorConfig config) : config_(config) {
  if (config_.hidden_dim < 1) throw ValidationError("detector hidden size must be >= 1");
  const std::size_t h = config_.hidden_dim;
  layer1_ = GatedCell(input_dim(), h, 0);
  layer2_ = GatedCell(h, h, layer1_.param_count());
  params_.assign(layer1_.param_count() + layer2_.param_count() + h + 1, 0.0);
  Rng rng(config_.seed);
  layer1_.Init(params_, rng, config_.init_scale, 0.0);
  layer2_.Init(params_, rng, config_.init_scale, 0.0);
  std::uniform_real_distribution<double> u(-config_.init_scale, config_.init_scale);
  const std::size_t w0 = layer1_.param_count() + layer2_.param_count();
  for (std::size_t i = 0; i < h; ++i) params_[w0 + i] = u(rng);
}

Matrix DetectorModel::Inputs(std::span<const double> attributions) const {
  if (attributions.empty()) throw ValidationError("empty attribution sequence");
  Matrix x = DetectorFeatures(attributions, config_.raw_feature);
  if (config_.reverse) {
    Matrix r(x.rows, x.cols);
    for (std::size_t t = 0; t < x.rows; ++t) {
      for (std::size_t c = 0; c < x.cols; ++c) r(t, c) = x(x.rows - 1 - t, c);
    }
    return r;
  }
  return x;
}

namespace {

Matrix HiddenRows(const Matrix& hidden) {
  Matrix out(hidden.rows - 1, hidden.cols);
  std::copy(hidden.data.begin() + static_cast<std::ptrdiff_t>(hidden.cols),
            hidden.data.end(), out.data.begin());
  return out;
}

std::vector<double> ReadoutVector(const Matrix& states, Readout readout) {
  std::vector<double> r(states.cols, 0.0);
  if (readout == Readout::kLast) {
    const auto last = states.row(states.rows - 1);
    r.assign(last.begin(), last.end());
  } else {
    for (std::size_t t = 0; t < states.rows; ++t) {
      for (std::size_t j = 0; j < states.cols; ++j) r[j] += states(t, j);
    }
    for (auto& v : r) v /= static_cast<double>(states.rows);
  }
  return r;
}

}  // namespace

double DetectorModel::Predict(std::span<const double> attributions) const {
  return Sigmoid(Logit(attributions));
}

double DetectorModel::Logit(std::span<const double> attributions) const {
  const Matrix x = Inputs(attributions);
  const auto t1 = layer1_.Forward(params_, x);
  const auto t2 = layer2_.Forward(params_, HiddenRows(t1.hidden));
  const auto r = ReadoutVector(HiddenRows(t2.hidden), config_.readout);
  const std::size_t w0 = layer1_.param_count() + layer2_.param_count();
  const std::span<const double> w(params_.data() + w0, config_.hidden_dim);
  return Dot(w, r) + params_.back();
}

double DetectorModel::Loss(std::span<const double> attributions, int label,
                           double weight) const {
  const double z = Logit(attributions);
  return weight * (label ? Softplus(-z) : Softplus(z));
}

double DetectorModel::LossAndGradient(std::span<const double> attributions, int label,
                                      double weight, std::span<double> grad) const {
  const Matrix x = Inputs(attributions);
  const auto t1 = layer1_.Forward(params_, x);
  const Matrix h1 = HiddenRows(t1.hidden);
  const auto t2 = layer2_.Forward(params_, h1);
  const Matrix h2 = HiddenRows(t2.hidden);
  const auto r = ReadoutVector(h2, config_.readout);
  const std::size_t hd = config_.hidden_dim;
  const std::size_t w0 = layer1_.param_count() + layer2_.param_count();
  const std::span<const double> w(params_.data() + w0, hd);
  const double z = Dot(w, r) + params_.back();
  const double y = Sigmoid(z);
  const double dz = weight * (y - static_cast<double>(label));

  for (std::size_t j = 0; j < hd; ++j) grad[w0 + j] += dz * r[j];
  grad.back() += dz;

  const std::size_t T = h2.rows;
  Matrix d_h2(T, hd);
  if (config_.readout == Readout::kLast) {
    for (std::size_t j = 0; j < hd; ++j) d_h2(T - 1, j) = dz * w[j];
  } else {
    const double inv = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < hd; ++j) d_h2(t, j) = dz * w[j] * inv;
    }
  }
  const Matrix d_h1 = layer2_.Backward(params_, t2, d_h2, grad);
  layer1_.Backward(params_, t1, d_h1, grad);
  return weight * (label ? Softplus(-z) : Softplus(z));
}

nlohmann::json DetectorModel::ToJson() const {
  return {{"format", "graderprobe.detector"},
          {"version", kDetectorVersion},
          {"hidden_dim", config_.hidden_dim},
          {"raw_feature", config_.raw_feature},
          {"readout", ToString(config_.readout)},
          {"reverse", config_.reverse},
          {"init_scale", config_.init_scale},
          {"seed", config_.seed},
          {"params", params_}};
}

DetectorModel DetectorModel::FromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "graderprobe.detector") {
    throw ValidationError("not a detector checkpoint");
  }
  if (j.at("version").get<int>() != kDetectorVersion) {
    throw ValidationError("unsupported detector checkpoint version");
  }
  DetectorConfig c;
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.raw_feature = j.at("raw_feature").get<bool>();
  c.readout = ParseReadout(j.at("readout").get<std::string>());
  c.reverse = j.at("reverse").get<bool>();
  c.init_scale = j.at("init_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  DetectorModel m(c);
  const auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != m.params_.size()) throw ValidationError("detector parameter count mismatch");
  m.params_ = p;
  return m;
}

void DetectorModel::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << ToJson().dump() << '\n';
}

DetectorModel DetectorModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return FromJson(nlohmann::json::parse(in));
}

DetectorDataset BuildDetectorDataset(const Corpus& corpus, const ScoringModel& model,
                                     const TriggerSet& train_triggers,
                                     const TriggerSet& test_triggers,
                                     const IGConfig& ig, double test_fraction,
                                     std::uint64_t seed) {
  if (train_triggers.empty() || test_triggers.empty()) {
    throw ValidationError("trigger sets must be non-empty");
  }
  const std::set<std::vector<std::string>> train_set(train_triggers.begin(),
                                                     train_triggers.end());
  for (const auto& t : test_triggers) {
    if (t.empty()) throw ValidationError("empty trigger");
    if (train_set.count(t)) throw ValidationError("train and test trigger sets overlap");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test fraction must lie in (0, 1)");
  }
  const std::size_t n = corpus.essays.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test == n) throw ValidationError("corpus too small to split");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  struct Job {
    std::size_t essay;
    const std::vector<std::string>* trigger;  // nullptr for clean
    bool test;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < n; ++i) {
    const bool test = i < n_test;
    const std::size_t e = order[i];
    jobs.push_back({e, nullptr, test});
    if (test) {
      jobs.push_back({e, &test_triggers[i % test_triggers.size()], true});
    } else {
      for (const auto& t : train_triggers) jobs.push_back({e, &t, false});
    }
  }

  IGConfig inner = ig;
  inner.workers = 1;
  std::vector<LabeledSequence> seqs(jobs.size());
  ParallelFor(jobs.size(), ig.workers, [&](std::size_t j) {
    const auto& essay = corpus.essays[jobs[j].essay];
    LabeledSequence s;
    s.essay_id = essay.essay_id;
    if (jobs[j].trigger) {
      s.trigger = *jobs[j].trigger;
      s.label = 1;
      s.tokens = s.trigger;
    }
    s.tokens.insert(s.tokens.end(), essay.tokens.begin(), essay.tokens.end());
    s.attributions = IntegratedGradients(model, s.tokens, inner, essay.essay_id).attributions;
    seqs[j] = std::move(s);
  });

  DetectorDataset ds;
  ds.train_triggers = train_triggers;
  ds.test_triggers = test_triggers;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    (jobs[j].test ? ds.test : ds.train).push_back(std::move(seqs[j]));
  }
  return ds;
}

std::pair<TriggerSet, TriggerSet> BuildTriggerBank(const ScoringModel& model,
                                                   const Corpus& corpus,
                                                   const TriggerBankOptions& options) {
  if (options.length < 1 || options.per_split < 1) {
    throw ValidationError("trigger bank needs length and count >= 1");
  }
  const auto ranked = RankSingleTokenTriggers(model, corpus, options.direction,
                                              TriggerPlacement::kPrepend, options.workers);
  const std::size_t pool = std::min(options.pool, ranked.size());
  std::array<std::vector<std::string>, 2> sides;
  for (std::size_t i = 0; i < pool; ++i) {
    sides[i % 2].push_back(model.vocab().Token(ranked[i].first));
  }
  Rng rng(options.seed);
  std::array<TriggerSet, 2> out;
  for (std::size_t s = 0; s < 2; ++s) {
    if (sides[s].size() < options.length) {
      throw ValidationError("trigger bank pool too small for the trigger length");
    }
    std::set<std::vector<std::string>> seen;
    for (std::size_t attempt = 0; out[s].size() < options.per_split; ++attempt) {
      if (attempt > 1000 * options.per_split) {
        throw ValidationError("cannot draw enough distinct triggers from the pool");
      }
      std::vector<std::string> side = sides[s];
      std::shuffle(side.begin(), side.end(), rng);
      side.resize(options.length);
      if (seen.insert(side).second) out[s].push_back(side);
    }
  }
  return {out[0], out[1]};
}

DetectorTrainResult TrainDetector(const std::vector<LabeledSequence>& data,
                                  const DetectorConfig& config,
                                  const DetectorTrainOptions& options) {
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  const auto [w_neg, w_pos] = ClassWeights(labels, options.class_balanced);
  auto weight = [&](int label) { return label ? w_pos : w_neg; };

  DetectorTrainResult result{DetectorModel(config), {}};
  auto& model = result.model;
  const std::size_t np = model.params().size();

  auto full_loss = [&]() {
    std::vector<double> losses(data.size());
    ParallelFor(data.size(), options.workers, [&](std::size_t i) {
      losses[i] = model.Loss(data[i].attributions, data[i].label, weight(data[i].label));
    });
    double total = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      total += losses[i];
      wsum += weight(data[i].label);
    }
    return total / wsum;
  };

  result.loss_history.push_back(full_loss());
  Adam adam(np);
  Rng rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bsz = std::max<std::size_t>(1, options.batch_size);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      std::vector<std::vector<double>> slots(end - start, std::vector<double>(np, 0.0));
      ParallelFor(end - start, options.workers, [&](std::size_t b) {
        const auto& s = data[order[start + b]];
        model.LossAndGradient(s.attributions, s.label, weight(s.label), slots[b]);
      });
      std::vector<double> grad(np, 0.0);
      double wsum = 0.0;
      for (std::size_t b = 0; b < slots.size(); ++b) {
        wsum += weight(data[order[start + b]].label);
        for (std::size_t i = 0; i < np; ++i) grad[i] += slots[b][i];
      }
      for (auto& g : grad) g /= wsum;
      ClipInPlace(grad, options.clip_norm);
      adam.Step(model.mutable_params(), grad, options.learning_rate);
    }
    const double loss = full_loss();
    if (!std::isfinite(loss)) throw TrainingError("detector loss is not finite");
    result.loss_history.push_back(loss);
    spdlog::debug("detector epoch {} loss {:.6f}", epoch + 1, loss);
  }
  return result;
}

OversensitiveVerdict DetectOversensitive(const DetectorModel& detector,
                                         std::span<const double> attributions,
                                         double threshold) {
  const double y = detector.Predict(attributions);
  return {y >= threshold, y};
}

BinaryMetrics MetricsFromCounts(std::size_t tp, std::size_t fp, std::size_t fn,
                                std::size_t tn) {
  BinaryMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  const std::size_t n = tp + fp + fn + tn;
  m.accuracy = n ? d(tp + tn) / d(n) : 0.0;
  m.precision = tp + fp ? d(tp) / d(tp + fp) : 0.0;
  m.recall = tp + fn ? d(tp) / d(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0
             ? 2 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

BinaryMetrics MetricsFromScores(std::span<const double> scores,
                                std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw ValidationError("score/label length mismatch");
  auto counts = [&](double thr) {
    std::array<std::size_t, 4> c{};  // tp fp fn tn
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool pred = scores[i] >= thr;
      if (pred && labels[i]) ++c[0];
      else if (pred) ++c[1];
      else if (labels[i]) ++c[2];
      else ++c[3];
    }
    return c;
  };
  const auto c = counts(threshold);
  BinaryMetrics m = MetricsFromCounts(c[0], c[1], c[2], c[3]);
  for (int k = 0; k <= 20; ++k) {
    const double thr = k / 20.0;
    const auto r = counts(thr);
    const double pos = static_cast<double>(r[0] + r[2]);
    const double neg = static_cast<double>(r[1] + r[3]);
    m.roc.push_back({thr, pos ? r[0] / pos : 0.0, neg ? r[1] / neg : 0.0});
  }
  return m;
}

BinaryMetrics DetectorMetrics(const DetectorModel& detector,
                              const std::vector<LabeledSequence>& test,
                              double threshold, int workers) {
  std::vector<double> scores(test.size());
  std::vector<int> labels(test.size());
  ParallelFor(test.size(), workers, [&](std::size_t i) {
    scores[i] = detector.Predict(test[i].attributions);
    labels[i] = test[i].label;
  });
  return MetricsFromScores(scores, labels, threshold);
}

nlohmann::json MetricsToJson(const BinaryMetrics& m) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : m.roc) {
    roc.push_back({{"threshold", p.threshold}, {"tpr", p.tpr}, {"fpr", p.fpr}});
  }
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"tp", m.tp},               {"fp", m.fp},
          {"fn", m.fn},             {"tn", m.tn},               {"roc", roc}};
}

TokenBaseline TokenBaseline::Train(const std::vector<LabeledSequence>& data,
                                   const DetectorTrainOptions& options) {
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  const auto [w_neg, w_pos] = ClassWeights(labels, options.class_balanced);

  TokenBaseline b;
  std::set<std::string> types;
  for (const auto& s : data) types.insert(s.tokens.begin(), s.tokens.end());
  for (const auto& t : types) {
    const std::size_t id = b.index_.size();
    b.index_[t] = id;
  }
  // Sparse presence features per sequence.
  std::vector<std::vector<std::size_t>> feats(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::set<std::size_t> present;
    for (const auto& t : data[i].tokens) present.insert(b.index_.at(t));
    feats[i].assign(present.begin(), present.end());
  }
  const std::size_t np = types.size() + 1;
  std::vector<double> params(np, 0.0);
  Adam adam(np);
  Rng rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bsz = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bsz) {
      const std::size_t end = std::min(order.size(), start + bsz);
      std::vector<double> grad(np, 0.0);
      double wsum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        double z = params.back();
        for (auto f : feats[i]) z += params[f];
        const double w = data[i].label ? w_pos : w_neg;
        const double dz = w * (Sigmoid(z) - data[i].label);
        for (auto f : feats[i]) grad[f] += dz;
        grad.back() += dz;
        wsum += w;
      }
      for (auto& g : grad) g /= wsum;
      ClipInPlace(grad, options.clip_norm);
      adam.Step(params, grad, options.learning_rate);
    }
  }
  b.bias_ = params.back();
  params.pop_back();
  b.weights_ = std::move(params);
  return b;
}

double TokenBaseline::Predict(std::span<const std::string> tokens) const {
  std::set<std::size_t> present;
  for (const auto& t : tokens) {
    if (auto it = index_.find(t); it != index_.end()) present.insert(it->second);
  }
  double z = bias_;
  for (auto f : present) z += weights_[f];
  return Sigmoid(z);
}

BinaryMetrics BaselineMetrics(const TokenBaseline& baseline,
                              const std::vector<LabeledSequence>& test,
                              double threshold) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : test) {
    scores.push_back(baseline.Predict(s.tokens));
    labels.push_back(s.label);
  }
  return MetricsFromScores(scores, labels, threshold);
}

nlohmann::json SequenceToJson(const LabeledSequence& s) {
  return {{"essay_id", s.essay_id},
          {"trigger", s.trigger},
          {"tokens", s.tokens},
          {"attributions", s.attributions},
          {"label", s.label}};
}

LabeledSequence SequenceFromJson(const nlohmann::json& j) {
  LabeledSequence s;
  s.essay_id = j.at("essay_id").get<std::int64_t>();
  s.trigger = j.at("trigger").get<std::vector<std::string>>();
  s.tokens = j.at("tokens").get<std::vector<std::string>>();
  s.attributions = j.at("attributions").get<std::vector<double>>();
  s.label = j.at("label").get<int>();
  return s;
}

nlohmann::json DatasetManifest(const DetectorDataset& dataset) {
  auto hash = [](const std::vector<LabeledSequence>& seqs) {
    std::string bytes;
    for (const auto& s : seqs) bytes += SequenceToJson(s).dump() + '\n';
    return Fnv1aHex(bytes);
  };
  return {{"train_triggers", dataset.train_triggers},
          {"test_triggers", dataset.test_triggers},
          {"train_size", dataset.train.size()},
          {"test_size", dataset.test.size()},
          {"train_hash", hash(dataset.train)},
          {"test_hash", hash(dataset.test)}};
}

}  // namespace graderprobe
