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

#include "graderprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace graderprobe {
namespace {

namespace fs = std::filesystem;

constexpr char kStyle[] =
    "body{font-family:sans-serif;margin:2em;max-width:60em}"
    "table{border-collapse:collapse;margin-bottom:1.5em}"
    "td,th{border:1px solid #ccc;padding:2px 8px;text-align:right}"
    "th:first-child,td:first-child{text-align:left}"
    ".tok{padding:1px 2px;margin:1px;display:inline-block}";

void WriteFile(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

nlohmann::json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

std::string Page(const std::string& title, const std::string& body) {
  return "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" +
         HtmlEscape(title) + "</title><style>" + kStyle + "</style></head><body>\n" +
         body + "</body></html>\n";
}

std::string Table(const std::string& heading,
                  const std::vector<std::pair<std::string, nlohmann::json>>& rows,
                  const std::vector<std::string>& columns) {
  if (rows.empty()) return "";
  std::string html = "<h2>" + heading + "</h2>\n<table><tr><th>run</th>";
  for (const auto& c : columns) html += "<th>" + c + "</th>";
  html += "</tr>\n";
  for (const auto& [name, obj] : rows) {
    html += "<tr><td>" + HtmlEscape(name) + "</td>";
    for (const auto& c : columns) {
      html += "<td>" + (obj.contains(c) ? JsonCell(obj.at(c)) : std::string("-")) + "</td>";
    }
    html += "</tr>\n";
  }
  return html + "</table>\n";
}

nlohmann::json NamedToJson(const std::vector<std::pair<std::string, nlohmann::json>>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [name, obj] : rows) out.push_back({{"name", name}, {"value", obj}});
  return out;
}

}  // namespace

std::string HtmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string JsonCell(const nlohmann::json& value) { return HtmlEscape(value.dump()); }

std::string AttributionColor(double value, double max_abs) {
  const double t = max_abs > 0 ? std::clamp(std::fabs(value) / max_abs, 0.0, 1.0) : 0.0;
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - 0.75 * t)));
  char buf[32];
  if (value > 0) {
    std::snprintf(buf, sizeof(buf), "rgb(255,%d,%d)", fade, fade);
  } else if (value < 0) {
    std::snprintf(buf, sizeof(buf), "rgb(%d,%d,255)", fade, fade);
  } else {
    std::snprintf(buf, sizeof(buf), "rgb(255,255,255)");
  }
  return buf;
}

std::string EssayPage(const AttributionRecord& r) {
  double max_abs = 0.0;
  for (double a : r.attributions) max_abs = std::max(max_abs, std::fabs(a));
  std::ostringstream body;
  body << "<p><a href=\"../index.html\">index</a></p>\n<h1>Essay " << r.essay_id
       << "</h1>\n<p>score " << nlohmann::json(r.score).dump() << ", baseline "
       << nlohmann::json(r.baseline_score).dump() << ", completeness error "
       << nlohmann::json(r.completeness_error).dump() << "</p>\n<p>";
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    const double a = i < r.attributions.size() ? r.attributions[i] : 0.0;
    body << "<span class=\"tok\" style=\"background:" << AttributionColor(a, max_abs)
         << "\" title=\"" << nlohmann::json(a).dump() << "\">" << HtmlEscape(r.tokens[i])
         << "</span>";
  }
  body << "</p>\n";
  return Page("Essay " + std::to_string(r.essay_id), body.str());
}

std::string RetentionSvg(const nlohmann::json& curve) {
  constexpr double kW = 320, kH = 200, kPad = 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\"><rect x=\"" << kPad << "\" y=\"0\" width=\"" << kW - kPad << "\" height=\""
      << kH - kPad << "\" fill=\"none\" stroke=\"#999\"/>";
  std::string points;
  for (const auto& p : curve) {
    const double x = kPad + p.at("fraction").get<double>() * (kW - kPad);
    const double y =
        (kH - kPad) * (1.0 - std::clamp(p.at("relative_qwk").get<double>(), 0.0, 1.2) / 1.2);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
    points += buf;
  }
  if (!points.empty()) points.pop_back();
  svg << "<polyline fill=\"none\" stroke=\"#c33\" stroke-width=\"2\" points=\"" << points
      << "\"/><text x=\"" << kPad << "\" y=\"" << kH - 8
      << "\" font-size=\"11\">fraction of tokens (0 to 1)</text><text x=\"2\" y=\"12\" "
         "font-size=\"11\">rel. QWK</text></svg>";
  return svg.str();
}

ReportArtifacts LoadReportArtifacts(const std::vector<fs::path>& run_dirs) {
  ReportArtifacts a;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    const std::string run = dir.filename().empty() ? dir.parent_path().filename().string()
                                                   : dir.filename().string();
    for (const auto& f : files) {
      const std::string stem = f.stem().string();
      const std::string name = run + "/" + stem;
      if (f.filename() == "attributions.jsonl") {
        auto recs = ReadRecordsJsonl(f);
        a.attributions.insert(a.attributions.end(), recs.begin(), recs.end());
      } else if (f.extension() != ".json") {
        continue;
      } else if (stem.rfind("attack_report", 0) == 0 || stem.rfind("cross_prompt", 0) == 0) {
        a.attacks.emplace_back(name, ReadJson(f));
      } else if (stem.rfind("detector_metrics", 0) == 0 || stem == "baseline_metrics" ||
                 stem == "overstable_summary") {
        a.detectors.emplace_back(name, ReadJson(f));
      } else if (stem.rfind("perturb_stats", 0) == 0) {
        a.perturbations.emplace_back(name, ReadJson(f));
      } else if (stem.rfind("retention", 0) == 0) {
        a.retention.emplace_back(name, ReadJson(f));
      }
    }
  }
  return a;
}

void EmitReport(const ReportArtifacts& artifacts, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "essays", ec);
  if (!ec) fs::create_directories(out_dir / "data", ec);
  if (ec) throw Error("cannot create report directory " + out_dir.string() + ": " + ec.message());

  std::string body = "<h1>GraderProbe report</h1>\n";
  body += Table("Attacks", artifacts.attacks,
                {"pct_increased", "pct_decreased", "mean_change", "mean_change_increased",
                 "unk_tokens"});
  body += Table("Detectors", artifacts.detectors,
                {"accuracy", "precision", "recall", "f1", "flag_rate"});
  body += Table("Perturbations", artifacts.perturbations,
                {"mu_pos", "mu_neg", "n_pos", "n_neg", "sigma"});
  if (!artifacts.retention.empty()) {
    body += "<h2>QWK retention</h2>\n";
    for (const auto& [name, curve] : artifacts.retention) {
      body += "<h3>" + HtmlEscape(name) + "</h3>\n" + RetentionSvg(curve) + "\n";
    }
  }
  if (!artifacts.attributions.empty()) {
    body += "<h2>Essays</h2>\n<ul>\n";
    for (const auto& r : artifacts.attributions) {
      const std::string id = std::to_string(r.essay_id);
      body += "<li><a href=\"essays/" + id + ".html\">" + id + "</a> score " +
              nlohmann::json(r.score).dump() + "</li>\n";
      WriteFile(out_dir / "essays" / (id + ".html"), EssayPage(r));
    }
    body += "</ul>\n";
  }
  WriteFile(out_dir / "index.html", Page("GraderProbe report", body));

  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : artifacts.attributions) recs.push_back(RecordToJson(r));
  WriteFile(out_dir / "data" / "attributions.json", recs.dump(1) + "\n");
  WriteFile(out_dir / "data" / "attacks.json", NamedToJson(artifacts.attacks).dump(1) + "\n");
  WriteFile(out_dir / "data" / "detectors.json",
            NamedToJson(artifacts.detectors).dump(1) + "\n");
  WriteFile(out_dir / "data" / "perturbations.json",
            NamedToJson(artifacts.perturbations).dump(1) + "\n");
  WriteFile(out_dir / "data" / "retention.json",
            NamedToJson(artifacts.retention).dump(1) + "\n");
}

}  // namespace graderprobe
