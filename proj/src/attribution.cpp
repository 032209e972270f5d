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

#include "graderprobe/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

namespace graderprobe {

std::string ToString(QuadratureRule r) {
  return r == QuadratureRule::kLeftRiemann ? "left" : "midpoint";
}

QuadratureRule ParseQuadratureRule(const std::string& s) {
  if (s == "left") return QuadratureRule::kLeftRiemann;
  if (s == "midpoint") return QuadratureRule::kMidpoint;
  throw ValidationError("unknown quadrature rule " + s);
}

double AttributionRecord::Sum() const {
  double s = 0.0;
  for (double a : attributions) s += a;
  return s;
}

double CompletenessError(double attribution_sum, double score,
                         double baseline_score) {
  const double delta = score - baseline_score;
  return std::abs(attribution_sum - delta) /
         std::max(std::abs(delta), kCompletenessEpsilon);
}

AttributionRecord IntegratedGradients(const ScoringModel& model,
                                      std::span<const std::string> tokens,
                                      const IGConfig& config,
                                      std::int64_t essay_id) {
  if (config.steps < 1) throw ValidationError("IG steps must be >= 1");
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  const auto ids = model.vocab().Encode(tokens);
  const Matrix x = model.Embed(DropPadding(ids));
  const std::size_t n = x.rows, d = x.cols;
  const std::size_t m = config.steps;
  const double offset = config.rule == QuadratureRule::kMidpoint ? 0.5 : 0.0;

  Matrix summed(n, d);
  std::vector<Matrix> partial(m);
  for (std::size_t start = 0; start < m; start += batch) {
    const std::size_t count = std::min(batch, m - start);
    ParallelFor(count, config.workers, [&](std::size_t j) {
      const std::size_t k = start + j;
      const double alpha = (static_cast<double>(k) + offset) / static_cast<double>(m);
      Matrix point = x;
      for (double& v : point.data) v *= alpha;
      partial[k] = model.GradientsEmbedded(point).inputs;
    });
    for (std::size_t k = start; k < start + count; ++k) {
      for (std::size_t i = 0; i < summed.data.size(); ++i) {
        summed.data[i] += partial[k].data[i];
      }
      partial[k] = Matrix();
    }
  }

  AttributionRecord r;
  r.essay_id = essay_id;
  r.tokens.assign(tokens.begin(), tokens.end());
  r.attributions.assign(ids.size(), 0.0);
  for (std::size_t pos = 0, t = 0; pos < ids.size(); ++pos) {
    if (ids[pos] == kPadId) continue;
    double a = 0.0;
    for (std::size_t c = 0; c < d; ++c) a += x(t, c) * summed(t, c);
    r.attributions[pos] = a / static_cast<double>(m);
    ++t;
  }
  r.score = model.ForwardEmbedded(x);
  r.baseline_score = model.ForwardEmbedded(Matrix(n, d));
  r.completeness_error = CompletenessError(r.Sum(), r.score, r.baseline_score);
  return r;
}

AttributionRecord IntegratedGradients(const ScoringModel& model,
                                      const Essay& essay, const IGConfig& config) {
  return IntegratedGradients(model, essay.tokens, config, essay.essay_id);
}

std::vector<AttributionRecord> AttributeCorpus(const ScoringModel& model,
                                               const Corpus& corpus,
                                               const IGConfig& config) {
  std::vector<AttributionRecord> out(corpus.essays.size());
  IGConfig inner = config;
  inner.workers = 1;
  ParallelFor(out.size(), config.workers, [&](std::size_t i) {
    out[i] = IntegratedGradients(model, corpus.essays[i], inner);
  });
  return out;
}

CompletenessResult CompletenessCheck(const AttributionRecord& record,
                                     double tolerance) {
  const double err =
      CompletenessError(record.Sum(), record.score, record.baseline_score);
  return {err <= tolerance, err};
}

AttributionReport BuildAttributionReport(std::span<const AttributionRecord> records,
                                         std::size_t k) {
  struct Acc {
    double sum = 0.0;
    std::size_t count = 0;
    std::size_t first_seen = 0;
  };
  std::unordered_map<std::string, Acc> acc;
  std::vector<std::string> order;
  for (const auto& r : records) {
    if (r.tokens.size() != r.attributions.size()) {
      throw ValidationError("attribution record is misaligned with its tokens");
    }
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      auto [it, inserted] = acc.try_emplace(r.tokens[i]);
      if (inserted) {
        it->second.first_seen = order.size();
        order.push_back(r.tokens[i]);
      }
      it->second.sum += r.attributions[i];
      ++it->second.count;
    }
  }
  std::vector<TokenAttribution> all;
  all.reserve(order.size());
  for (const auto& tok : order) {
    const auto& a = acc.at(tok);
    all.push_back({tok, a.sum / static_cast<double>(a.count), a.count});
  }

  AttributionReport report;
  if (all.empty()) return report;

  std::vector<TokenAttribution> pos, neg;
  for (const auto& t : all) {
    if (t.mean > 0) pos.push_back(t);
    if (t.mean < 0) neg.push_back(t);
  }
  // stable_sort keeps first-appearance order among equal means.
  std::stable_sort(pos.begin(), pos.end(),
                   [](const auto& a, const auto& b) { return a.mean > b.mean; });
  std::stable_sort(neg.begin(), neg.end(),
                   [](const auto& a, const auto& b) { return a.mean < b.mean; });
  pos.resize(std::min(k, pos.size()));
  neg.resize(std::min(k, neg.size()));
  report.top_positive = std::move(pos);
  report.top_negative = std::move(neg);

  std::vector<double> mags;
  for (const auto& t : all) mags.push_back(std::abs(t.mean));
  const double cutoff = Quantile(mags, 0.10);
  std::vector<TokenAttribution> low;
  for (const auto& t : all) {
    if (std::abs(t.mean) <= cutoff) low.push_back(t);
  }
  std::stable_sort(low.begin(), low.end(), [](const auto& a, const auto& b) {
    return std::abs(a.mean) < std::abs(b.mean);
  });
  report.unattributed = std::move(low);
  return report;
}

nlohmann::json RecordToJson(const AttributionRecord& r) {
  return {{"essay_id", r.essay_id},
          {"tokens", r.tokens},
          {"attributions", r.attributions},
          {"score", r.score},
          {"baseline_score", r.baseline_score},
          {"error", r.completeness_error}};
}

AttributionRecord RecordFromJson(const nlohmann::json& j) {
  AttributionRecord r;
  r.essay_id = j.at("essay_id").get<std::int64_t>();
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  r.attributions = j.at("attributions").get<std::vector<double>>();
  r.score = j.at("score").get<double>();
  r.baseline_score = j.at("baseline_score").get<double>();
  r.completeness_error = j.at("error").get<double>();
  if (r.tokens.size() != r.attributions.size()) {
    throw ValidationError("attribution record is misaligned with its tokens");
  }
  return r;
}

void WriteRecordsJsonl(std::span<const AttributionRecord> records,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << RecordToJson(r).dump() << "\n";
}

std::vector<AttributionRecord> ReadRecordsJsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<AttributionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(RecordFromJson(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

nlohmann::json ReportToJson(const AttributionReport& report) {
  auto list = [](const std::vector<TokenAttribution>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : v) {
      a.push_back({{"token", t.token}, {"mean", t.mean}, {"occurrences", t.occurrences}});
    }
    return a;
  };
  return {{"top_positive", list(report.top_positive)},
          {"top_negative", list(report.top_negative)},
          {"unattributed", list(report.unattributed)}};
}

}  // namespace graderprobe
