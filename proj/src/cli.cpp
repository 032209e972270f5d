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

#include "graderprobe/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "graderprobe/analysis.hpp"
#include "graderprobe/attribution.hpp"
#include "graderprobe/corpus.hpp"
#include "graderprobe/defend_sensitive.hpp"
#include "graderprobe/defend_stable.hpp"
#include "graderprobe/model.hpp"
#include "graderprobe/perturb.hpp"
#include "graderprobe/report.hpp"
#include "graderprobe/synth.hpp"
#include "graderprobe/trigger.hpp"
#include "json.hpp"

namespace graderprobe::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

// An option bound to a variable, readable and writable as JSON so the
// manifest can record and replay it.
struct Bound {
  std::string key;
  CLI::Option* option;
  std::function<json()> get;
  std::function<void(const json&)> set;
};

struct Registry {
  std::vector<Bound> globals;
  std::map<std::string, std::vector<Bound>> commands;
};

template <class T>
CLI::Option* Bind(CLI::App* app, std::vector<Bound>& reg, const std::string& key, T& var,
                  const std::string& help) {
  auto* opt = app->add_option("--" + key, var, help)->capture_default_str();
  reg.push_back({key, opt, [&var] { return json(var); },
                 [&var](const json& j) { var = j.get<T>(); }});
  return opt;
}

struct Globals {
  std::uint64_t seed = 1;
  int workers = 0;
  std::string config;
  std::string out = "out";
};

struct Settings {
  // shared inputs
  std::string corpus, prompts, model, train, validation, eval_corpus, detector;
  int prompt = 0;
  std::size_t limit = 0;
  std::size_t steps = 50;
  std::string rule = "left";
  // synth / ingest
  std::string preset = "planted-bias";
  std::size_t essays_per_prompt = 1000;
  std::string bias_token = "zq";
  std::string tsv;
  std::vector<double> split{0.8, 0.1, 0.1};
  // train
  std::string variant = "mean-pool";
  std::size_t embedding_dim = 16, hidden_dim = 16, epochs = 200, batch = 16;
  double lr = 1.0, clip = 5.0, init_scale = 0.1, recurrent_decay = 0.01;
  int min_count = 1;
  // attribute
  std::size_t ig_batch = 32, top_k = 10;
  // perturb
  std::string kind = "delete-least";
  double magnitude = 0.2;
  std::string position = "end";
  std::string payload;
  // attack
  std::vector<std::size_t> trigger_len{3, 5, 10, 20};
  std::string direction = "increase";
  std::size_t k = 20, beam = 3, iterations = 10, attack_batch = 32;
  std::string filler = "the", placement = "prepend";
  std::string cross_model, cross_corpus;
  int cross_prompt = 0;
  // defend-train / detect
  std::string defense = "sensitive";
  std::size_t triggers_per_split = 8, detector_trigger_len = 3, pool = 40;
  double test_fraction = 0.3;
  std::size_t detector_hidden = 8, detector_epochs = 60, detector_batch = 32;
  double detector_lr = 0.01;
  std::string readout = "mean";
  bool reverse = false, raw_feature = true;
  std::size_t order = 3, folds = 5, trees = 100, subsample = 256;
  double smoothing = 0.1, contamination = 0.01;
  bool oov_feature = false, sentence_feature = false;
  double threshold = 0.5;
  int label = -1;
  // eval / report
  std::vector<double> retention;
  std::vector<std::string> pmi_tokens;
  double pmi_smoothing = 1.0;
  std::vector<std::string> from;
};

struct Context {
  const Globals& g;
  const Settings& s;
  fs::path out;
  int workers;
};

// ---------------------------------------------------------------- helpers

void Require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError("missing required option --" + flag);
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void WriteJson(const fs::path& path, const json& j) { WriteText(path, j.dump(2) + "\n"); }

std::vector<PromptSpec> PromptsFor(const std::string& corpus, const std::string& prompts) {
  const fs::path p = prompts.empty() ? fs::path(corpus).parent_path() / "prompts.json"
                                     : fs::path(prompts);
  return LoadPrompts(p);
}

Corpus LoadCorpus(const std::string& path, const Settings& s) {
  Corpus c = ReadCorpusJsonl(path, PromptsFor(path, s.prompts));
  if (s.prompt > 0) c = c.ForPrompt(s.prompt);
  if (s.limit > 0 && c.essays.size() > s.limit) c.essays.resize(s.limit);
  return c;
}

// Perturbation statistics need one score range.
const PromptSpec& SinglePrompt(const Corpus& c) {
  if (c.essays.empty()) throw ValidationError("corpus is empty");
  const int id = c.essays.front().prompt_id;
  for (const auto& e : c.essays) {
    if (e.prompt_id != id) throw UsageError("corpus mixes prompts; pass --prompt");
  }
  return c.prompt(id);
}

IGConfig MakeIG(const Context& ctx) {
  IGConfig ig;
  ig.steps = ctx.s.steps;
  ig.rule = ParseQuadratureRule(ctx.s.rule);
  ig.batch_size = ctx.s.ig_batch;
  ig.workers = ctx.workers;
  return ig;
}

TriggerPlacement ParsePlacement(const std::string& s) {
  if (s == "prepend") return TriggerPlacement::kPrepend;
  if (s == "append") return TriggerPlacement::kAppend;
  throw ValidationError("unknown placement " + s);
}

std::vector<double> Denormalized(std::span<const double> norm, const PromptSpec& spec) {
  std::vector<double> out;
  for (double v : norm) out.push_back(DenormalizeScore(std::clamp(v, 0.0, 1.0), spec));
  return out;
}

json RetentionToJson(const std::vector<RetentionPoint>& curve) {
  json out = json::array();
  for (const auto& p : curve) {
    out.push_back({{"fraction", p.fraction}, {"qwk", p.qwk}, {"relative_qwk", p.relative_qwk}});
  }
  return out;
}

// --------------------------------------------------------------- commands

void RunSynth(const Context& ctx) {
  SynthOptions o;
  o.preset = ctx.s.preset;
  o.essays_per_prompt = ctx.s.essays_per_prompt;
  o.seed = ctx.g.seed;
  o.bias_token = ctx.s.bias_token;
  const Corpus c = GenerateSynthetic(o);
  if (ctx.s.split.size() != 3) throw UsageError("--split needs three fractions");
  const auto splits =
      SplitCorpus(c, {ctx.s.split[0], ctx.s.split[1], ctx.s.split[2]}, DeriveSeed(ctx.g.seed, 1));
  WriteCorpusJsonl(c, ctx.out / "corpus.jsonl");
  WriteCorpusJsonl(splits.train, ctx.out / "train.jsonl");
  WriteCorpusJsonl(splits.validation, ctx.out / "validation.jsonl");
  WriteCorpusJsonl(splits.test, ctx.out / "test.jsonl");
  SavePrompts(c.prompts, ctx.out / "prompts.json");
  spdlog::info("synth: {} essays ({} train)", c.essays.size(), splits.train.essays.size());
}

void RunIngest(const Context& ctx) {
  const auto& s = ctx.s;
  if (s.tsv.empty() == s.corpus.empty()) throw UsageError("pass exactly one of --tsv, --corpus");
  Corpus c;
  if (!s.tsv.empty()) {
    Require(s.prompts, "prompts");
    c = LoadAsapTsv(s.tsv, LoadPrompts(s.prompts));
  } else {
    c = LoadCorpus(s.corpus, s);
  }
  if (s.split.size() != 3) throw UsageError("--split needs three fractions");
  const auto splits = SplitCorpus(c, {s.split[0], s.split[1], s.split[2]}, ctx.g.seed);
  WriteCorpusJsonl(c, ctx.out / "corpus.jsonl");
  WriteCorpusJsonl(splits.train, ctx.out / "train.jsonl");
  WriteCorpusJsonl(splits.validation, ctx.out / "validation.jsonl");
  WriteCorpusJsonl(splits.test, ctx.out / "test.jsonl");
  SavePrompts(c.prompts, ctx.out / "prompts.json");
  spdlog::info("ingest: {} essays", c.essays.size());
}

void RunTrain(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.train, "train");
  const Corpus train = LoadCorpus(s.train, s);
  ModelConfig mc;
  mc.variant = ParseVariant(s.variant);
  mc.embedding_dim = s.embedding_dim;
  mc.hidden_dim = s.hidden_dim;
  mc.init_scale = s.init_scale;
  mc.seed = DeriveSeed(ctx.g.seed, 1);
  ScoringModel model(mc, BuildVocab(train, s.min_count));
  TrainOptions to;
  to.epochs = s.epochs;
  to.learning_rate = s.lr;
  to.batch_size = s.batch;
  to.clip_norm = s.clip;
  to.recurrent_decay = s.recurrent_decay;
  to.seed = DeriveSeed(ctx.g.seed, 2);
  to.workers = ctx.workers;
  const auto result = TrainModel(model, train, to);
  model.Save(ctx.out / "model.json");
  json log = {{"loss_history", result.loss_history},
              {"train_qwk", CorpusQwk(train, PredictCorpus(model, train, ctx.workers))},
              {"vocab_size", model.vocab().size()},
              {"checksum", model.Checksum()}};
  if (!s.validation.empty()) {
    const Corpus val = LoadCorpus(s.validation, s);
    log["validation_qwk"] = CorpusQwk(val, PredictCorpus(model, val, ctx.workers));
    log["validation_mse"] = MeanSquaredError(model, val, ctx.workers);
  }
  WriteJson(ctx.out / "train_log.json", log);
  spdlog::info("train: final loss {:.6f}", result.loss_history.back());
}

void RunAttribute(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.model, "model");
  Require(s.corpus, "corpus");
  const auto model = ScoringModel::Load(s.model);
  const Corpus c = LoadCorpus(s.corpus, s);
  const auto records = AttributeCorpus(model, c, MakeIG(ctx));
  WriteRecordsJsonl(records, ctx.out / "attributions.jsonl");
  WriteJson(ctx.out / "attribution_report.json",
            ReportToJson(BuildAttributionReport(records, s.top_k)));
  std::vector<double> errors;
  std::size_t within = 0;
  for (const auto& r : records) {
    errors.push_back(r.completeness_error);
    if (r.completeness_error < 0.05) ++within;
  }
  WriteJson(ctx.out / "completeness.json",
            {{"n", records.size()},
             {"max_error", errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end())},
             {"fraction_within_5pct",
              records.empty() ? 0.0 : static_cast<double>(within) / static_cast<double>(records.size())}});
}

void RunPerturb(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.model, "model");
  Require(s.corpus, "corpus");
  const auto model = ScoringModel::Load(s.model);
  const Corpus c = LoadCorpus(s.corpus, s);
  const PromptSpec& spec = SinglePrompt(c);
  const PerturbKind kind = ParsePerturbKind(s.kind);
  const bool needs_ig = kind == PerturbKind::kDeleteLeast || kind == PerturbKind::kAddMost ||
                        kind == PerturbKind::kLexiconSwap;
  const IGConfig ig = MakeIG(ctx);
  IGConfig inner = ig;
  inner.workers = 1;
  const auto table = model.embedding_table();
  const auto payload = Tokenize(s.payload).tokens;
  if (kind == PerturbKind::kInsertText && payload.empty()) {
    throw UsageError("insert-text needs --payload");
  }
  GarbageLexicon lexicon;
  if (kind == PerturbKind::kGarbage) {
    lexicon = BuildGarbageLexicon(TokenCounts(c), SynthFunctionWords());
  }
  const InsertPosition position = ParseInsertPosition(s.position);

  Corpus perturbed;
  perturbed.prompts = c.prompts;
  perturbed.essays.resize(c.essays.size());
  std::vector<double> band_change(c.essays.size(), 0.0);
  ParallelFor(c.essays.size(), ctx.workers, [&](std::size_t i) {
    const Essay& e = c.essays[i];
    const std::uint64_t seed = DeriveSeed(ctx.g.seed, static_cast<std::uint64_t>(i));
    AttributionRecord rec;
    if (needs_ig) rec = IntegratedGradients(model, e, inner);
    Essay p;
    switch (kind) {
      case PerturbKind::kDeleteLeast: p = DeleteLeastAttributed(e, rec, s.magnitude); break;
      case PerturbKind::kAddMost: p = AddMostAttributed(e, rec, s.magnitude); break;
      case PerturbKind::kShuffleSentences: p = Shuffle(e, ShuffleLevel::kSentence, seed); break;
      case PerturbKind::kShuffleWords: p = Shuffle(e, ShuffleLevel::kWord, seed); break;
      case PerturbKind::kLexiconSwap: {
        p = LexiconSwap(e, rec, table, model.vocab(), s.magnitude);
        band_change[i] = TopBandChangeRate(rec, IntegratedGradients(model, p, inner), s.magnitude);
        break;
      }
      case PerturbKind::kInsertText: p = InsertText(e, payload, position, seed); break;
      case PerturbKind::kGarbage: {
        p = e;
        const std::size_t len =
            s.magnitude >= 1.0 ? static_cast<std::size_t>(s.magnitude) : e.tokens.size();
        p.tokens = GenerateGarbage(lexicon, std::max<std::size_t>(len, 1), seed);
        p.sentences = SegmentSentences(p.tokens);
        break;
      }
    }
    p.provenance = Provenance{ToString(kind), s.magnitude, seed, e.essay_id};
    perturbed.essays[i] = std::move(p);
  });

  const auto before = PredictCorpus(model, c, ctx.workers);
  const auto after = PredictCorpus(model, perturbed, ctx.workers);
  const auto stats =
      ComputePerturbStats(Denormalized(before, spec), Denormalized(after, spec), spec);
  json out = StatsToJson(stats);
  out["kind"] = ToString(kind);
  out["magnitude"] = s.magnitude;
  out["n"] = c.essays.size();
  if (kind == PerturbKind::kLexiconSwap) out["top_band_change_rate"] = Mean(band_change);
  WriteCorpusJsonl(perturbed, ctx.out / "perturbed.jsonl");
  SavePrompts(perturbed.prompts, ctx.out / "prompts.json");
  WriteJson(ctx.out / "perturb_stats.json", out);
}

void RunAttack(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.model, "model");
  Require(s.corpus, "corpus");
  const auto model = ScoringModel::Load(s.model);
  const Corpus attack = LoadCorpus(s.corpus, s);
  const Corpus held_out = s.eval_corpus.empty() ? attack : LoadCorpus(s.eval_corpus, s);
  std::optional<ScoringModel> cross_model;
  Corpus cross_corpus;
  if (!s.cross_model.empty()) {
    Require(s.cross_corpus, "cross-corpus");
    cross_model = ScoringModel::Load(s.cross_model);
    Settings cs = s;
    cs.prompt = s.cross_prompt;
    cross_corpus = LoadCorpus(s.cross_corpus, cs);
  }
  if (s.trigger_len.empty()) throw UsageError("--trigger-len needs at least one value");
  for (std::size_t c : s.trigger_len) {
    TriggerOptions o;
    o.length = c;
    o.direction = ParseDirection(s.direction);
    o.k = s.k;
    o.beam_width = s.beam;
    o.iterations = s.iterations;
    o.batch_size = s.attack_batch;
    o.seed = DeriveSeed(ctx.g.seed, c);
    o.filler = s.filler;
    o.placement = ParsePlacement(s.placement);
    o.workers = ctx.workers;
    const auto trig = ExtractTrigger(model, attack, o);
    const std::string suffix = "_c" + std::to_string(c) + ".json";
    WriteJson(ctx.out / ("trigger" + suffix), TriggerToJson(trig));
    WriteJson(ctx.out / ("attack_report" + suffix),
              AttackReportToJson(EvaluateAttack(model, held_out, trig.tokens, o.placement,
                                                ctx.workers)));
    if (cross_model) {
      WriteJson(ctx.out / ("cross_prompt" + suffix),
                AttackReportToJson(CrossPromptEval(trig.tokens, *cross_model, cross_corpus,
                                                   o.placement, ctx.workers)));
    }
    spdlog::info("attack c={}: trigger [{}]", c, fmt::join(trig.tokens, " "));
  }
}

void RunDefendTrain(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.corpus, "corpus");
  const Corpus c = LoadCorpus(s.corpus, s);
  if (s.defense == "stable") {
    OverstableOptions o;
    o.order = s.order;
    o.smoothing = s.smoothing;
    o.folds = s.folds;
    o.features.oov_rate = s.oov_feature;
    o.features.mean_sentence_length = s.sentence_feature;
    o.forest.trees = s.trees;
    o.forest.subsample = s.subsample;
    o.forest.contamination = s.contamination;
    o.forest.seed = DeriveSeed(ctx.g.seed, 3);
    o.forest.workers = ctx.workers;
    const auto det = FitOverstableDetector(c, o);
    det.Save(ctx.out / "overstable.json");
    return;
  }
  if (s.defense != "sensitive") throw UsageError("--kind must be sensitive or stable");
  Require(s.model, "model");
  const auto model = ScoringModel::Load(s.model);
  TriggerBankOptions bo;
  bo.per_split = s.triggers_per_split;
  bo.length = s.detector_trigger_len;
  bo.pool = s.pool;
  bo.direction = ParseDirection(s.direction);
  bo.seed = DeriveSeed(ctx.g.seed, 4);
  bo.workers = ctx.workers;
  const auto [train_t, test_t] = BuildTriggerBank(model, c, bo);
  const auto ds = BuildDetectorDataset(c, model, train_t, test_t, MakeIG(ctx), s.test_fraction,
                                       DeriveSeed(ctx.g.seed, 5));
  DetectorConfig dc;
  dc.hidden_dim = s.detector_hidden;
  dc.raw_feature = s.raw_feature;
  dc.readout = ParseReadout(s.readout);
  dc.reverse = s.reverse;
  dc.seed = DeriveSeed(ctx.g.seed, 6);
  DetectorTrainOptions to;
  to.epochs = s.detector_epochs;
  to.learning_rate = s.detector_lr;
  to.batch_size = s.detector_batch;
  to.seed = DeriveSeed(ctx.g.seed, 7);
  to.workers = ctx.workers;
  const auto trained = TrainDetector(ds.train, dc, to);
  trained.model.Save(ctx.out / "detector.json");
  WriteJson(ctx.out / "detector_dataset.json", DatasetManifest(ds));
  {
    std::ofstream test(ctx.out / "detector_test.jsonl", std::ios::binary);
    for (const auto& seq : ds.test) test << SequenceToJson(seq).dump() << '\n';
  }
  WriteJson(ctx.out / "detector_train_log.json", {{"loss_history", trained.loss_history}});
  WriteJson(ctx.out / "detector_metrics.json",
            MetricsToJson(DetectorMetrics(trained.model, ds.test, s.threshold, ctx.workers)));
  const auto baseline = TokenBaseline::Train(ds.train, to);
  WriteJson(ctx.out / "baseline_metrics.json",
            MetricsToJson(BaselineMetrics(baseline, ds.test, s.threshold)));
}

void RunDetect(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.detector, "detector");
  Require(s.corpus, "corpus");
  const Corpus c = LoadCorpus(s.corpus, s);
  std::vector<double> scores(c.essays.size());
  std::vector<json> rows(c.essays.size());
  std::size_t flagged = 0;
  if (s.defense == "stable") {
    const auto det = OverstableDetector::Load(s.detector);
    ParallelFor(c.essays.size(), ctx.workers, [&](std::size_t i) {
      const auto v = DetectOverstable(det, c.essays[i]);
      scores[i] = v.flag ? 1.0 : 0.0;
      rows[i] = VerdictToJson(v);
    });
  } else if (s.defense == "sensitive") {
    Require(s.model, "model");
    const auto model = ScoringModel::Load(s.model);
    const auto det = DetectorModel::Load(s.detector);
    IGConfig ig = MakeIG(ctx);
    ig.workers = 1;
    ParallelFor(c.essays.size(), ctx.workers, [&](std::size_t i) {
      const auto rec = IntegratedGradients(model, c.essays[i], ig);
      const auto v = DetectOversensitive(det, rec.attributions, s.threshold);
      scores[i] = v.flag ? 1.0 : 0.0;
      rows[i] = {{"essay_id", c.essays[i].essay_id},
                 {"confidence", v.confidence},
                 {"flag", v.flag}};
    });
  } else {
    throw UsageError("--kind must be sensitive or stable");
  }
  std::ofstream out(ctx.out / "detections.jsonl", std::ios::binary);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].dump() << '\n';
    if (scores[i] > 0.5) ++flagged;
  }
  json summary = {{"n", c.essays.size()},
                  {"flag_rate", c.essays.empty() ? 0.0
                                                 : static_cast<double>(flagged) /
                                                       static_cast<double>(c.essays.size())}};
  if (s.label == 0 || s.label == 1) {
    const std::vector<int> labels(c.essays.size(), s.label);
    const auto m = MetricsFromScores(scores, labels, 0.5);
    summary["accuracy"] = m.accuracy;
    summary["precision"] = m.precision;
    summary["recall"] = m.recall;
    summary["f1"] = m.f1;
  }
  WriteJson(ctx.out / "detector_metrics.json", summary);
}

void RunEval(const Context& ctx) {
  const auto& s = ctx.s;
  Require(s.model, "model");
  Require(s.corpus, "corpus");
  const auto model = ScoringModel::Load(s.model);
  const Corpus c = LoadCorpus(s.corpus, s);
  const auto pred = PredictCorpus(model, c, ctx.workers);
  WriteJson(ctx.out / "eval.json", {{"n", c.essays.size()},
                                    {"qwk", CorpusQwk(c, pred)},
                                    {"mse", MeanSquaredError(model, c, ctx.workers)}});
  if (!s.retention.empty()) {
    const auto records = AttributeCorpus(model, c, MakeIG(ctx));
    WriteJson(ctx.out / "retention_delete.json",
              RetentionToJson(QwkRetentionCurve(model, c, records, s.retention,
                                                RetentionMode::kDelete, ctx.workers)));
    WriteJson(ctx.out / "retention_add.json",
              RetentionToJson(QwkRetentionCurve(model, c, records, s.retention,
                                                RetentionMode::kAdd, ctx.workers)));
  }
  if (!s.pmi_tokens.empty()) {
    const PmiTable table(c, s.pmi_smoothing);
    json pmi = json::array();
    for (const auto& t : s.pmi_tokens) {
      json row = {{"token", t}};
      json values = json::object();
      for (int cls : table.classes()) values[std::to_string(cls)] = table.Pmi(t, cls);
      row["pmi"] = values;
      pmi.push_back(row);
    }
    WriteJson(ctx.out / "pmi.json", pmi);
  }
}

void RunReport(const Context& ctx) {
  if (ctx.s.from.empty()) throw UsageError("--from needs at least one run directory");
  std::vector<fs::path> dirs(ctx.s.from.begin(), ctx.s.from.end());
  EmitReport(LoadReportArtifacts(dirs), ctx.out);
}

// ------------------------------------------------------------------ setup

void SetupLogging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_logger_mt("graderprobe");
    spdlog::set_default_logger(logger);
    done = true;
  }
  const char* env = std::getenv("GRADERPROBE_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

struct CommandSpec {
  std::string name;
  std::string help;
  std::function<void(const Context&)> run;
};

void AddCommandOptions(const std::string& name, CLI::App* sub, std::vector<Bound>& r,
                       Settings& s) {
  auto corpus_opts = [&] {
    Bind(sub, r, "corpus", s.corpus, "essay JSONL");
    Bind(sub, r, "prompts", s.prompts, "prompt JSON (default: prompts.json beside the corpus)");
    Bind(sub, r, "prompt", s.prompt, "restrict to one prompt id (0 = all)");
    Bind(sub, r, "limit", s.limit, "use at most this many essays (0 = all)");
  };
  auto ig_opts = [&] {
    Bind(sub, r, "steps", s.steps, "Integrated Gradients steps");
    Bind(sub, r, "rule", s.rule, "quadrature rule")->check(CLI::IsMember({"left", "midpoint"}));
    Bind(sub, r, "ig-batch", s.ig_batch, "path points per batch");
  };
  if (name == "synth") {
    Bind(sub, r, "preset", s.preset, "synthetic preset")->check(CLI::IsMember(SynthPresets()));
    Bind(sub, r, "essays-per-prompt", s.essays_per_prompt, "essays per prompt");
    Bind(sub, r, "bias-token", s.bias_token, "planted token");
    Bind(sub, r, "split", s.split, "train/validation/test fractions")->expected(3);
  } else if (name == "ingest") {
    Bind(sub, r, "tsv", s.tsv, "ASAP TSV file");
    corpus_opts();
    Bind(sub, r, "split", s.split, "train/validation/test fractions")->expected(3);
  } else if (name == "train") {
    Bind(sub, r, "train", s.train, "training JSONL");
    Bind(sub, r, "validation", s.validation, "validation JSONL");
    Bind(sub, r, "prompts", s.prompts, "prompt JSON");
    Bind(sub, r, "prompt", s.prompt, "restrict to one prompt id (0 = all)");
    Bind(sub, r, "limit", s.limit, "use at most this many essays (0 = all)");
    Bind(sub, r, "variant", s.variant, "model variant")
        ->check(CLI::IsMember({"mean-pool", "recurrent"}));
    Bind(sub, r, "embedding-dim", s.embedding_dim, "embedding width");
    Bind(sub, r, "hidden-dim", s.hidden_dim, "recurrent state width");
    Bind(sub, r, "epochs", s.epochs, "training epochs");
    Bind(sub, r, "lr", s.lr, "SGD learning rate");
    Bind(sub, r, "batch", s.batch, "minibatch size");
    Bind(sub, r, "clip", s.clip, "gradient norm clip");
    Bind(sub, r, "init-scale", s.init_scale, "uniform init half-width");
    Bind(sub, r, "recurrent-decay", s.recurrent_decay, "L2 on recurrent matrices");
    Bind(sub, r, "min-count", s.min_count, "vocabulary frequency cutoff");
  } else if (name == "attribute") {
    Bind(sub, r, "model", s.model, "model checkpoint");
    corpus_opts();
    ig_opts();
    Bind(sub, r, "top-k", s.top_k, "tokens per report list");
  } else if (name == "perturb") {
    Bind(sub, r, "model", s.model, "model checkpoint");
    corpus_opts();
    ig_opts();
    Bind(sub, r, "kind", s.kind, "perturbation")
        ->check(CLI::IsMember({"delete-least", "add-most", "shuffle-sentences", "shuffle-words",
                               "lexicon-swap", "insert-text", "garbage"}));
    Bind(sub, r, "magnitude", s.magnitude, "fraction, band or garbage length");
    Bind(sub, r, "position", s.position, "insertion point")
        ->check(CLI::IsMember({"begin", "end", "random"}));
    Bind(sub, r, "payload", s.payload, "text to insert");
  } else if (name == "attack") {
    Bind(sub, r, "model", s.model, "model checkpoint");
    corpus_opts();
    Bind(sub, r, "eval-corpus", s.eval_corpus, "held-out essays (default: attack corpus)");
    Bind(sub, r, "trigger-len", s.trigger_len, "trigger lengths");
    Bind(sub, r, "direction", s.direction, "score direction")
        ->check(CLI::IsMember({"increase", "decrease"}));
    Bind(sub, r, "k", s.k, "candidates per position");
    Bind(sub, r, "beam", s.beam, "beam width");
    Bind(sub, r, "iterations", s.iterations, "search iterations");
    Bind(sub, r, "batch", s.attack_batch, "essays per gradient batch");
    Bind(sub, r, "filler", s.filler, "initial trigger token");
    Bind(sub, r, "placement", s.placement, "trigger placement")
        ->check(CLI::IsMember({"prepend", "append"}));
    Bind(sub, r, "cross-model", s.cross_model, "second-prompt model for transfer");
    Bind(sub, r, "cross-corpus", s.cross_corpus, "second-prompt essays");
    Bind(sub, r, "cross-prompt", s.cross_prompt, "prompt id filter for --cross-corpus");
  } else if (name == "defend-train") {
    Bind(sub, r, "kind", s.defense, "detector kind")
        ->check(CLI::IsMember({"sensitive", "stable"}));
    Bind(sub, r, "model", s.model, "model checkpoint (sensitive)");
    corpus_opts();
    ig_opts();
    Bind(sub, r, "direction", s.direction, "trigger direction")
        ->check(CLI::IsMember({"increase", "decrease"}));
    Bind(sub, r, "triggers-per-split", s.triggers_per_split, "train and test triggers each");
    Bind(sub, r, "trigger-len", s.detector_trigger_len, "tokens per trigger");
    Bind(sub, r, "pool", s.pool, "harmful tokens considered");
    Bind(sub, r, "test-fraction", s.test_fraction, "held-out essay fraction");
    Bind(sub, r, "hidden", s.detector_hidden, "detector state width");
    Bind(sub, r, "epochs", s.detector_epochs, "detector epochs");
    Bind(sub, r, "lr", s.detector_lr, "Adam step size");
    Bind(sub, r, "batch", s.detector_batch, "detector minibatch");
    Bind(sub, r, "readout", s.readout, "detector readout")->check(CLI::IsMember({"last", "mean"}));
    Bind(sub, r, "reverse", s.reverse, "read sequences right to left");
    Bind(sub, r, "raw-feature", s.raw_feature, "feed raw attributions too");
    Bind(sub, r, "threshold", s.threshold, "decision threshold");
    Bind(sub, r, "order", s.order, "n-gram order (stable)");
    Bind(sub, r, "smoothing", s.smoothing, "add-k constant (stable)");
    Bind(sub, r, "folds", s.folds, "cross-fitting folds (stable)");
    Bind(sub, r, "trees", s.trees, "isolation trees (stable)");
    Bind(sub, r, "subsample", s.subsample, "isolation subsample (stable)");
    Bind(sub, r, "contamination", s.contamination, "expected outlier fraction (stable)");
    Bind(sub, r, "oov-feature", s.oov_feature, "add OOV rate feature (stable)");
    Bind(sub, r, "sentence-feature", s.sentence_feature, "add sentence length feature (stable)");
  } else if (name == "detect") {
    Bind(sub, r, "kind", s.defense, "detector kind")
        ->check(CLI::IsMember({"sensitive", "stable"}));
    Bind(sub, r, "detector", s.detector, "detector file");
    Bind(sub, r, "model", s.model, "model checkpoint (sensitive)");
    corpus_opts();
    ig_opts();
    Bind(sub, r, "threshold", s.threshold, "decision threshold (sensitive)");
    Bind(sub, r, "label", s.label, "true label of every essay for metrics (-1 = unknown)");
  } else if (name == "eval") {
    Bind(sub, r, "model", s.model, "model checkpoint");
    corpus_opts();
    ig_opts();
    Bind(sub, r, "retention", s.retention, "token fractions for QWK retention curves");
    Bind(sub, r, "pmi-tokens", s.pmi_tokens, "tokens to report PMI for");
    Bind(sub, r, "pmi-smoothing", s.pmi_smoothing, "PMI add-alpha constant");
  } else if (name == "report") {
    Bind(sub, r, "from", s.from, "run directories");
  }
}

json ReadManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + " is not valid JSON: " + e.what());
  }
}

void ApplyConfig(const json& config, const std::vector<Bound>& bound) {
  for (const auto& b : bound) {
    if (b.option->count() > 0 || !config.contains(b.key)) continue;
    try {
      b.set(config.at(b.key));
    } catch (const json::exception&) {
      throw UsageError("config value for " + b.key + " has the wrong type");
    }
  }
}

}  // namespace

int Dispatch(int argc, const char* const* argv) {
  SetupLogging();
  Globals g;
  Settings s;
  Registry reg;
  CLI::App app{"GraderProbe: attribution, attacks and defenses for essay scorers", "graderprobe"};
  app.fallthrough();
  Bind(&app, reg.globals, "seed", g.seed, "master seed");
  Bind(&app, reg.globals, "workers", g.workers, "worker threads (0 = all cores)");
  app.add_option("--config", g.config, "manifest.json to replay");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.set_version_flag("--version", kVersion);

  const std::vector<CommandSpec> commands = {
      {"ingest", "load an ASAP TSV (or JSONL) corpus and split it", RunIngest},
      {"synth", "generate a synthetic corpus", RunSynth},
      {"train", "train a scoring model", RunTrain},
      {"attribute", "Integrated Gradients attributions", RunAttribute},
      {"perturb", "apply an overstability perturbation", RunPerturb},
      {"attack", "search universal triggers and evaluate them", RunAttack},
      {"defend-train", "train an oversensitivity or overstability detector", RunDefendTrain},
      {"detect", "run a detector over essays", RunDetect},
      {"eval", "QWK, retention curves and PMI", RunEval},
      {"report", "emit the static HTML report", RunReport},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    AddCommandOptions(c.name, sub, reg.commands[c.name], s);
    subs[c.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::string name;
    for (const auto& [n, sub] : subs) {
      if (sub->parsed()) name = n;
    }
    json manifest_in;
    if (!g.config.empty()) {
      manifest_in = ReadManifest(g.config);
      const std::string recorded = manifest_in.value("command", "");
      if (name.empty()) name = recorded;
      if (!subs.count(name)) throw UsageError("config names no known command");
      const json cfg = manifest_in.value("config", json::object());
      ApplyConfig(cfg, reg.globals);
      ApplyConfig(cfg, reg.commands[name]);
    }
    if (name.empty()) {
      std::cerr << app.help() << "\nerror: a subcommand is required\n";
      return 2;
    }

    const fs::path out(g.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error("cannot create output directory " + out.string());

    json config = json::object();
    for (const auto& b : reg.globals) config[b.key] = b.get();
    for (const auto& b : reg.commands[name]) config[b.key] = b.get();
    const json manifest = {{"command", name},
                           {"config", config},
                           {"versions",
                            {{"graderprobe", kVersion},
                             {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                   std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                                   "." +
                                                   std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                             {"cli11", CLI11_VERSION}}}};

    const Context ctx{g, s, out, ResolveWorkers(g.workers)};
    for (const auto& c : commands) {
      if (c.name == name) c.run(ctx);
    }
    WriteJson(out / "manifest.json", manifest);
    return 0;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace graderprobe::cli
