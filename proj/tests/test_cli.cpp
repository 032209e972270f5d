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
#include <sstream>

#include <gtest/gtest.h>

#include "graderprobe/cli.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace graderprobe {
namespace {

namespace fs = std::filesystem;

int Invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "graderprobe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::Dispatch(static_cast<int>(argv.size()), argv.data());
}

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

TEST(Cli, UsageErrors) {
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(Invoke({}), 2);
  EXPECT_EQ(Invoke({"synth", "--no-such-flag"}), 2);
  EXPECT_EQ(Invoke({"frobnicate"}), 2);
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("synth"), std::string::npos);
  ::testing::internal::CaptureStdout();
  EXPECT_EQ(Invoke({"--help"}), 0);
  ::testing::internal::GetCapturedStdout();
}

TEST(Cli, RuntimeErrorExitsOne) {
  const auto out = testing::TempDir("cli_missing");
  ::testing::internal::CaptureStderr();
  EXPECT_EQ(Invoke({"train", "--train", (out / "nope.jsonl").string(), "--out", out.string()}), 1);
  ::testing::internal::GetCapturedStderr();
}

TEST(Cli, SynthIsDeterministic) {
  const auto a = testing::TempDir("cli_synth_a");
  const auto b = testing::TempDir("cli_synth_b");
  for (const auto& dir : {a, b}) {
    ASSERT_EQ(Invoke({"synth", "--preset", "planted-bias", "--seed", "7", "--essays-per-prompt",
                   "50", "--out", dir.string()}),
              0);
  }
  EXPECT_EQ(Tree(a), Tree(b));
  EXPECT_TRUE(fs::exists(a / "train.jsonl"));
  const auto m = nlohmann::json::parse(Slurp(a / "manifest.json"));
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["config"]["seed"], 7);
}

TEST(Cli, ManifestReplayIsByteIdentical) {
  const auto data = testing::TempDir("cli_replay_data");
  ASSERT_EQ(Invoke({"synth", "--seed", "3", "--essays-per-prompt", "60", "--out", data.string()}), 0);
  const auto first = testing::TempDir("cli_replay_1");
  const auto second = testing::TempDir("cli_replay_2");
  ASSERT_EQ(Invoke({"train", "--train", (data / "train.jsonl").string(), "--epochs", "3",
                 "--seed", "5", "--out", first.string()}),
            0);
  ASSERT_EQ(Invoke({"--config", (first / "manifest.json").string(), "--out", second.string()}), 0);
  EXPECT_EQ(Tree(first), Tree(second));
  // Explicit flags beat manifest values.
  const auto third = testing::TempDir("cli_replay_3");
  ASSERT_EQ(Invoke({"--config", (first / "manifest.json").string(), "train", "--epochs", "4",
                 "--out", third.string()}),
            0);
  const auto m = nlohmann::json::parse(Slurp(third / "manifest.json"));
  EXPECT_EQ(m["config"]["epochs"], 4);
  EXPECT_EQ(m["config"]["seed"], 5);
}

}  // namespace
}  // namespace graderprobe
