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

// Static HTML report.
//
// Layout under the output directory:
//   index.html          tables for attacks, detectors and perturbations,
//                       retention curves as inline SVG, essay links
//   essays/<id>.html    tokens shaded by signed attribution
//   data/*.json         the values behind every table
// Output depends only on the inputs (no timestamps), so regenerating from
// the same artifacts is byte-identical.

#ifndef GRADERPROBE_REPORT_HPP_
#define GRADERPROBE_REPORT_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "graderprobe/attribution.hpp"
#include "json.hpp"

namespace graderprobe {

struct ReportArtifacts {
  std::vector<AttributionRecord> attributions;
  // Named JSON objects as written by the attack, detect, perturb and eval
  // commands.
  std::vector<std::pair<std::string, nlohmann::json>> attacks;
  std::vector<std::pair<std::string, nlohmann::json>> detectors;
  std::vector<std::pair<std::string, nlohmann::json>> perturbations;
  // Arrays of {fraction, qwk, relative_qwk}.
  std::vector<std::pair<std::string, nlohmann::json>> retention;
};

// Collects known artifact files from run directories. Names are
// "<directory name>/<file stem>".
ReportArtifacts LoadReportArtifacts(const std::vector<std::filesystem::path>& run_dirs);

// CSS color for an attribution relative to the essay's largest magnitude:
// white at zero, red for positive, blue for negative.
std::string AttributionColor(double value, double max_abs);

std::string HtmlEscape(const std::string& s);

// Renders `value` exactly as it appears in the data/*.json files.
std::string JsonCell(const nlohmann::json& value);

std::string EssayPage(const AttributionRecord& record);
std::string RetentionSvg(const nlohmann::json& curve);

void EmitReport(const ReportArtifacts& artifacts, const std::filesystem::path& out_dir);

}  // namespace graderprobe

#endif  // GRADERPROBE_REPORT_HPP_
