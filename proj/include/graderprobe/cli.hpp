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

// Command-line entry point. Every run writes manifest.json into --out with
// the resolved configuration; `--config manifest.json` replays it, with
// explicit flags taking precedence over manifest values.

#ifndef GRADERPROBE_CLI_HPP_
#define GRADERPROBE_CLI_HPP_

namespace graderprobe::cli {

inline constexpr const char* kVersion = "0.1.0";

// 0 on success, 1 on runtime errors, 2 on usage errors.
int Dispatch(int argc, const char* const* argv);

}  // namespace graderprobe::cli

#endif  // GRADERPROBE_CLI_HPP_
