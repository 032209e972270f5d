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

#include "graderprobe/defend_stable.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

namespace graderprobe {
namespace {

constexpr char kBoundary[] = "<s>";
constexpr char kSep = '\x1f';

}  // namespace

NgramLM NgramLM::Train(std::span<const std::vector<std::string>> texts,
                       std::size_t order, double smoothing) {
  if (order < 1) throw ValidationError("LM order must be >= 1");
  if (!(smoothing > 0.0)) throw ValidationError("LM smoothing must be > 0");
  std::set<std::string> types;
  for (const auto& t : texts) types.insert(t.begin(), t.end());
  if (types.empty()) throw ValidationError("LM training corpus is empty");

  NgramLM lm;
  lm.order_ = order;
  lm.smoothing_ = smoothing;
  types.insert(Vocabulary::kUnkToken);
  lm.vocab_.assign(types.begin(), types.end());
  for (std::size_t i = 0; i < lm.vocab_.size(); ++i) lm.vocab_index_[lm.vocab_[i]] = i;

  for (const auto& text : texts) {
    std::vector<std::string> padded(order - 1, kBoundary);
    padded.insert(padded.end(), text.begin(), text.end());
    for (std::size_t t = order - 1; t < padded.size(); ++t) {
      const std::span<const std::string> ctx(padded.data() + t - (order - 1), order - 1);
      const std::string key = lm.ContextKey(ctx);
      lm.context_totals_[key] += 1.0;
      lm.ngram_counts_[key + kSep + padded[t]] += 1.0;
    }
  }
  return lm;
}

NgramLM NgramLM::Train(const Corpus& corpus, std::size_t order, double smoothing) {
  std::vector<std::vector<std::string>> texts;
  for (const auto& e : corpus.essays) texts.push_back(e.tokens);
  return Train(texts, order, smoothing);
}

std::string NgramLM::Canonical(const std::string& token) const {
  if (token == kBoundary) return token;
  return vocab_index_.count(token) ? token : std::string(Vocabulary::kUnkToken);
}

std::string NgramLM::ContextKey(std::span<const std::string> context) const {
  std::string key;
  const std::size_t want = order_ - 1;
  for (std::size_t i = 0; i < want; ++i) {
    // Left-pad short contexts with boundary markers.
    const std::size_t missing = want > context.size() ? want - context.size() : 0;
    const std::string& tok =
        i < missing ? std::string(kBoundary) : context[context.size() - want + i];
    if (i) key += kSep;
    key += Canonical(tok);
  }
  return key;
}

double NgramLM::Prob(std::span<const std::string> context,
                     const std::string& token) const {
  const std::string key = ContextKey(context);
  const double v = static_cast<double>(vocab_.size());
  double total = 0.0, count = 0.0;
  if (auto it = context_totals_.find(key); it != context_totals_.end()) total = it->second;
  if (auto it = ngram_counts_.find(key + kSep + Canonical(token));
      it != ngram_counts_.end()) {
    count = it->second;
  }
  return (count + smoothing_) / (total + smoothing_ * v);
}

double NgramLM::Perplexity(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw ValidationError("perplexity of an empty essay");
  double nll = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t lo = t >= order_ - 1 ? t - (order_ - 1) : 0;
    nll -= std::log(Prob(tokens.subspan(lo, t - lo), tokens[t]));
  }
  return std::exp(nll / static_cast<double>(tokens.size()));
}

nlohmann::json NgramLM::ToJson() const {
  // std::map gives a stable key order in the serialized file.
  std::map<std::string, double> ctx(context_totals_.begin(), context_totals_.end());
  std::map<std::string, double> grams(ngram_counts_.begin(), ngram_counts_.end());
  nlohmann::json jc = nlohmann::json::array(), jg = nlohmann::json::array();
  for (const auto& [k, v] : ctx) jc.push_back({k, v});
  for (const auto& [k, v] : grams) jg.push_back({k, v});
  return {{"format", "graderprobe.ngram"}, {"version", 1},
          {"order", order_},               {"smoothing", smoothing_},
          {"vocab", vocab_},               {"contexts", jc},
          {"ngrams", jg}};
}

NgramLM NgramLM::FromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "graderprobe.ngram") {
    throw ValidationError("not an n-gram model file");
  }
  NgramLM lm;
  lm.order_ = j.at("order").get<std::size_t>();
  lm.smoothing_ = j.at("smoothing").get<double>();
  lm.vocab_ = j.at("vocab").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < lm.vocab_.size(); ++i) lm.vocab_index_[lm.vocab_[i]] = i;
  for (const auto& e : j.at("contexts")) {
    lm.context_totals_[e.at(0).get<std::string>()] = e.at(1).get<double>();
  }
  for (const auto& e : j.at("ngrams")) {
    lm.ngram_counts_[e.at(0).get<std::string>()] = e.at(1).get<double>();
  }
  return lm;
}

double CFactor(std::size_t n) {
  if (n < 2) return 0.0;
  const double m = static_cast<double>(n - 1);
  return 2.0 * (std::log(m) + kEulerApprox) - 2.0 * m / static_cast<double>(n);
}

double IsoScore(double expected_path_length, std::size_t subsample) {
  const double c = CFactor(subsample);
  if (c <= 0.0) return 1.0;
  return std::exp2(-expected_path_length / c);
}

std::size_t IsoTree::Height() const {
  std::size_t best = 0;
  std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [id, depth] = stack.back();
    stack.pop_back();
    const auto& node = nodes[static_cast<std::size_t>(id)];
    if (node.feature < 0) {
      best = std::max(best, depth);
    } else {
      stack.push_back({node.left, depth + 1});
      stack.push_back({node.right, depth + 1});
    }
  }
  return best;
}

double IsoTree::PathLength(std::span<const double> point) const {
  std::size_t id = 0;
  double edges = 0.0;
  while (nodes[id].feature >= 0) {
    const auto& node = nodes[id];
    id = static_cast<std::size_t>(
        point[static_cast<std::size_t>(node.feature)] < node.split ? node.left
                                                                   : node.right);
    edges += 1.0;
  }
  return edges + CFactor(nodes[id].size);
}

IsoTree BuildIsoTree(const Matrix& points, std::size_t height_limit, Rng& rng) {
  IsoTree tree;
  struct Pending {
    int node;
    std::vector<std::size_t> rows;
    std::size_t depth;
  };
  std::vector<std::size_t> all(points.rows);
  std::iota(all.begin(), all.end(), 0);
  tree.nodes.push_back({});
  std::vector<Pending> queue{{0, std::move(all), 0}};
  while (!queue.empty()) {
    Pending p = std::move(queue.back());
    queue.pop_back();
    auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
    node.size = p.rows.size();
    if (p.rows.size() <= 1 || p.depth >= height_limit) continue;

    std::vector<std::size_t> splittable;
    std::vector<std::pair<double, double>> ranges(points.cols);
    for (std::size_t f = 0; f < points.cols; ++f) {
      double lo = points(p.rows[0], f), hi = lo;
      for (auto r : p.rows) {
        lo = std::min(lo, points(r, f));
        hi = std::max(hi, points(r, f));
      }
      ranges[f] = {lo, hi};
      if (lo < hi) splittable.push_back(f);
    }
    if (splittable.empty()) continue;
    const std::size_t f =
        splittable[std::uniform_int_distribution<std::size_t>(0, splittable.size() - 1)(rng)];
    const auto [lo, hi] = ranges[f];
    double split = std::uniform_real_distribution<double>(lo, hi)(rng);
    if (split <= lo) split = std::nextafter(lo, hi);

    std::vector<std::size_t> left, right;
    for (auto r : p.rows) (points(r, f) < split ? left : right).push_back(r);
    const int li = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    auto& parent = tree.nodes[static_cast<std::size_t>(p.node)];
    parent.feature = static_cast<int>(f);
    parent.split = split;
    parent.left = li;
    parent.right = li + 1;
    queue.push_back({li + 1, std::move(right), p.depth + 1});
    queue.push_back({li, std::move(left), p.depth + 1});
  }
  return tree;
}

IsoForest IsoForest::Fit(const Matrix& points, const IsoForestOptions& options) {
  if (points.rows == 0) throw ValidationError("isolation forest needs training points");
  if (!(options.contamination > 0.0 && options.contamination < 0.5)) {
    throw ValidationError("contamination must lie in (0, 0.5)");
  }
  if (options.trees < 1) throw ValidationError("isolation forest needs >= 1 tree");
  IsoForest forest;
  forest.dim_ = points.cols;
  forest.contamination_ = options.contamination;
  forest.subsample_ = std::min(options.subsample, points.rows);
  if (points.rows < options.subsample) {
    spdlog::warn("isolation forest: {} points < subsample {}; using all points",
                 points.rows, options.subsample);
  }
  const auto limit = static_cast<std::size_t>(
      std::ceil(std::log2(static_cast<double>(std::max<std::size_t>(forest.subsample_, 2)))));
  forest.trees_.resize(options.trees);
  ParallelFor(options.trees, options.workers, [&](std::size_t t) {
    Rng rng(DeriveSeed(options.seed, t));
    std::vector<std::size_t> idx(points.rows);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Matrix sample(forest.subsample_, points.cols);
    for (std::size_t i = 0; i < forest.subsample_; ++i) {
      for (std::size_t f = 0; f < points.cols; ++f) sample(i, f) = points(idx[i], f);
    }
    forest.trees_[t] = BuildIsoTree(sample, limit, rng);
  });
  std::vector<double> scores(points.rows);
  ParallelFor(points.rows, options.workers,
              [&](std::size_t i) { scores[i] = forest.Score(points.row(i)); });
  forest.threshold_ = Quantile(scores, 1.0 - options.contamination);
  return forest;
}

double IsoForest::MeanPathLength(std::span<const double> point) const {
  if (point.size() != dim_) throw ValidationError("feature width mismatch");
  double total = 0.0;
  for (const auto& t : trees_) total += t.PathLength(point);
  return total / static_cast<double>(trees_.size());
}

double IsoForest::Score(std::span<const double> point) const {
  return IsoScore(MeanPathLength(point), subsample_);
}

nlohmann::json IsoForest::ToJson() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      nodes.push_back({n.feature, n.split, n.left, n.right, n.size});
    }
    trees.push_back(std::move(nodes));
  }
  return {{"format", "graderprobe.isoforest"},
          {"version", 1},
          {"subsample", subsample_},
          {"dim", dim_},
          {"contamination", contamination_},
          {"threshold", threshold_},
          {"trees", trees}};
}

IsoForest IsoForest::FromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "graderprobe.isoforest") {
    throw ValidationError("not an isolation forest file");
  }
  IsoForest f;
  f.subsample_ = j.at("subsample").get<std::size_t>();
  f.dim_ = j.at("dim").get<std::size_t>();
  f.contamination_ = j.at("contamination").get<double>();
  f.threshold_ = j.at("threshold").get<double>();
  for (const auto& jt : j.at("trees")) {
    IsoTree t;
    for (const auto& n : jt) {
      t.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                         n.at(3).get<int>(), n.at(4).get<std::size_t>()});
    }
    f.trees_.push_back(std::move(t));
  }
  return f;
}

std::vector<double> StableFeatures(const NgramLM& lm, const Essay& essay,
                                   const FeatureOptions& options) {
  std::vector<double> f{lm.Perplexity(essay.tokens)};
  if (options.oov_rate) {
    const std::set<std::string> known(lm.vocab().begin(), lm.vocab().end());
    double oov = 0.0;
    for (const auto& t : essay.tokens) oov += known.count(t) ? 0.0 : 1.0;
    f.push_back(oov / static_cast<double>(essay.tokens.size()));
  }
  if (options.mean_sentence_length) {
    const double n = static_cast<double>(std::max<std::size_t>(essay.sentences.size(), 1));
    f.push_back(static_cast<double>(essay.tokens.size()) / n);
  }
  return f;
}

namespace {

std::size_t FeatureCount(const FeatureOptions& o) {
  return 1 + (o.oov_rate ? 1 : 0) + (o.mean_sentence_length ? 1 : 0);
}

}  // namespace

OverstableDetector FitOverstableDetector(const Corpus& train,
                                         const OverstableOptions& options) {
  if (train.essays.empty()) throw ValidationError("detector training corpus is empty");
  if (options.folds < 1) throw ValidationError("folds must be >= 1");
  OverstableDetector det{NgramLM::Train(train, options.order, options.smoothing), {},
                         options.features};
  const std::size_t n = train.essays.size();
  Matrix features(n, FeatureCount(options.features));
  const std::size_t folds = std::min(options.folds, n);
  if (folds <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto f = StableFeatures(det.lm, train.essays[i], options.features);
      std::copy(f.begin(), f.end(), features.row(i).begin());
    }
  } else {
    for (std::size_t k = 0; k < folds; ++k) {
      std::vector<std::vector<std::string>> texts;
      for (std::size_t i = 0; i < n; ++i) {
        if (i % folds != k) texts.push_back(train.essays[i].tokens);
      }
      const auto lm = NgramLM::Train(texts, options.order, options.smoothing);
      for (std::size_t i = k; i < n; i += folds) {
        const auto f = StableFeatures(lm, train.essays[i], options.features);
        std::copy(f.begin(), f.end(), features.row(i).begin());
      }
    }
  }
  det.forest = IsoForest::Fit(features, options.forest);
  return det;
}

OverstableVerdict DetectOverstable(const OverstableDetector& detector,
                                   const Essay& essay) {
  const auto f = StableFeatures(detector.lm, essay, detector.features);
  OverstableVerdict v;
  v.essay_id = essay.essay_id;
  v.perplexity = f[0];
  v.score = detector.forest.Score(f);
  v.flag = v.score > detector.forest.threshold();
  return v;
}

nlohmann::json OverstableDetector::ToJson() const {
  return {{"format", "graderprobe.overstable"},
          {"version", 1},
          {"features",
           {{"oov_rate", features.oov_rate},
            {"mean_sentence_length", features.mean_sentence_length}}},
          {"lm", lm.ToJson()},
          {"forest", forest.ToJson()}};
}

OverstableDetector OverstableDetector::FromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "graderprobe.overstable") {
    throw ValidationError("not an overstability detector file");
  }
  OverstableDetector d{NgramLM::FromJson(j.at("lm")), IsoForest::FromJson(j.at("forest")),
                       {}};
  d.features.oov_rate = j.at("features").value("oov_rate", false);
  d.features.mean_sentence_length = j.at("features").value("mean_sentence_length", false);
  return d;
}

void OverstableDetector::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << ToJson().dump() << '\n';
}

OverstableDetector OverstableDetector::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return FromJson(nlohmann::json::parse(in));
}

nlohmann::json VerdictToJson(const OverstableVerdict& v) {
  return {{"essay_id", v.essay_id},
          {"perplexity", v.perplexity},
          {"score", v.score},
          {"flag", v.flag}};
}

}  // namespace graderprobe
