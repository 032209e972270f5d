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

#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "graderprobe/report.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

namespace fs = std::filesystem;

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> Tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = Slurp(e.path());
  }
  return out;
}

ReportArtifacts Sample() {
  ReportArtifacts a;
  AttributionRecord r;
  r.essay_id = 3;
  r.tokens = {"good", "<b>", "zq"};
  r.attributions = {0.2, -0.1, 0.6};
  r.score = 0.7;
  r.baseline_score = 0.0;
  a.attributions.push_back(r);
  a.attacks.emplace_back("run/attack_report_c3",
                         nlohmann::json{{"pct_increased", 96.5}, {"pct_decreased", 1.25}});
  a.detectors.emplace_back("run/detector_metrics",
                           nlohmann::json{{"accuracy", 0.9375}, {"recall", 1.0}});
  a.perturbations.emplace_back("run/perturb_stats",
                               nlohmann::json{{"mu_pos", 0.0}, {"n_pos", 0.0}});
  a.retention.emplace_back("run/retention_delete",
                           nlohmann::json::array({{{"fraction", 0.0}, {"qwk", 0.8}, {"relative_qwk", 1.0}},
                                                  {{"fraction", 0.2}, {"qwk", 0.76}, {"relative_qwk", 0.95}}}));
  return a;
}

TEST(AttributionColor, NeutralAndSigned) {
  EXPECT_EQ(AttributionColor(0.0, 1.0), "rgb(255,255,255)");
  EXPECT_EQ(AttributionColor(0.0, 0.0), "rgb(255,255,255)");
  EXPECT_NE(AttributionColor(0.5, 1.0), AttributionColor(-0.5, 1.0));
}

TEST(EssayPage, AllZeroAttributionsAreNeutral) {
  AttributionRecord r;
  r.tokens = {"a", "b", "c"};
  r.attributions = {0.0, 0.0, 0.0};
  const std::string html = EssayPage(r);
  const std::regex color(R"(rgb\(\d+,\d+,\d+\))");
  std::size_t n = 0;
  for (auto it = std::sregex_iterator(html.begin(), html.end(), color); it != std::sregex_iterator(); ++it) {
    EXPECT_EQ(it->str(), "rgb(255,255,255)");
    ++n;
  }
  EXPECT_EQ(n, 3u);
}

TEST(HtmlEscape, EscapesMarkup) {
  EXPECT_EQ(HtmlEscape("<a href=\"x\">&'"), "&lt;a href=&quot;x&quot;&gt;&amp;&#39;");
}

TEST(EmitReport, RegenerationIsByteIdentical) {
  const auto a = testing::TempDir("report_a");
  const auto b = testing::TempDir("report_b");
  EmitReport(Sample(), a);
  EmitReport(Sample(), b);
  const auto ta = Tree(a);
  EXPECT_EQ(ta, Tree(b));
  EXPECT_TRUE(ta.count("index.html"));
  EXPECT_TRUE(ta.count("essays/3.html"));
  EXPECT_TRUE(ta.count("data/attacks.json"));
  EXPECT_EQ(ta.at("essays/3.html").find("<b>"), std::string::npos);
}

TEST(EmitReport, TablesMirrorJsonData) {
  const auto dir = testing::TempDir("report_mirror");
  EmitReport(Sample(), dir);
  const std::string index = Slurp(dir / "index.html");
  for (const char* file : {"attacks", "detectors", "perturbations"}) {
    const auto data = nlohmann::json::parse(Slurp(dir / "data" / (std::string(file) + ".json")));
    ASSERT_FALSE(data.empty()) << file;
    for (const auto& entry : data) {
      const std::string name = entry.at("name");
      EXPECT_NE(index.find("<td>" + HtmlEscape(name) + "</td>"), std::string::npos);
      for (const auto& [key, value] : entry.at("value").items()) {
        EXPECT_NE(index.find("<td>" + JsonCell(value) + "</td>"), std::string::npos)
            << name << "." << key;
      }
    }
  }
  EXPECT_NE(index.find("<svg"), std::string::npos);
}

TEST(EmitReport, UnwritableDestinationFails) {
  const auto dir = testing::TempDir("report_file");
  std::ofstream(dir / "blocker") << "x";
  EXPECT_THROW(EmitReport(Sample(), dir / "blocker"), Error);
}

TEST(LoadReportArtifacts, PicksUpKnownFiles) {
  const auto run = testing::TempDir("report_run");
  std::ofstream(run / "attack_report_c1.json") << R"({"pct_increased": 100.0})";
  std::ofstream(run / "detector_metrics.json") << R"({"accuracy": 0.5})";
  std::ofstream(run / "unrelated.json") << "{}";
  const auto art = LoadReportArtifacts({run});
  ASSERT_EQ(art.attacks.size(), 1u);
  EXPECT_EQ(art.attacks[0].first, "graderprobe_test_report_run/attack_report_c1");
  EXPECT_EQ(art.detectors.size(), 1u);
  EXPECT_TRUE(art.perturbations.empty());
}

}  // namespace
}  // namespace graderprobe
