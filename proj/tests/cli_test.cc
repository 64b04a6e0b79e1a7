// tests/cli_test.cc

// Copyright 2026  The ESF Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "cli.h"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "esf/dsp.h"
#include "test_util.h"

namespace esf::cli {
namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the esf binary through the shell; stderr is discarded.
Result Esf(const std::string& args, const std::string& cwd = ".") {
  const std::string cmd = "cd '" + cwd + "' && '" ESF_BINARY "' " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

TEST(ExitCodeTest, Mapping) {
  EXPECT_EQ(ExitCodeFor(ErrorKind::kArgument), kExitUsage);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kConfig), kExitUsage);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kCorruption), kExitData);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kIo), kExitData);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kNetwork), kExitNetwork);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kDelivery), kExitNetwork);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kLaunch), kExitNetwork);
}

TEST(CliTest, HelpAndUsage) {
  for (const char* sub : {"", "shard", "inspect", "augment", "features", "pipeline-dryrun", "serve",
                          "launch", "consume", "bench", "decode"}) {
    const Result r = Esf(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
  EXPECT_EQ(Esf("").code, kExitUsage);
  EXPECT_EQ(Esf("frobnicate").code, kExitUsage);
  EXPECT_EQ(Esf("shard --no-such-flag").code, kExitUsage);
  EXPECT_EQ(Esf("--set pipeline.batchsize=3 shard --synthetic 2").code, kExitUsage);
}

TEST(CliTest, ShardInspectDryrun) {
  testing::TempDir dir("cli");
  Result r = Esf("shard --synthetic 12 --num-shards 3 --pattern 'c-{}.esrd'", dir.path());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("c-00002.esrd"), std::string::npos);

  r = Esf("inspect c-00000.esrd", dir.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("utt-000003"), std::string::npos);

  const std::string dry =
      "--set vtlp.enabled=false --set acoustic.enabled=false pipeline-dryrun --batch-size 5 "
      "--shards c-00000.esrd c-00001.esrd c-00002.esrd";
  r = Esf(dry, dir.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("batches 3 records 12 skipped 0 checksum"), std::string::npos);
  EXPECT_EQ(Esf(dry, dir.path()).out, r.out);
}

TEST(CliTest, DataErrorsExitTwo) {
  testing::TempDir dir("cli");
  EXPECT_EQ(Esf("inspect missing.esrd", dir.path()).code, kExitData);
  {
    std::ofstream out(dir.File("junk.esrd"), std::ios::binary);
    out << "ESRD\x01garbage-garbage-garbage";
  }
  EXPECT_EQ(Esf("inspect junk.esrd", dir.path()).code, kExitData);
}

TEST(CliTest, NetworkErrorsExitThree) {
  EXPECT_EQ(Esf("consume --endpoint 127.0.0.1:1 --connect-timeout 0.3").code, kExitNetwork);
}

TEST(CliTest, AugmentAndFeatures) {
  testing::TempDir dir("cli");
  dsp::Waveform w{std::vector<double>(8000), 16000};
  for (size_t i = 0; i < w.size(); ++i) w.samples[i] = 0.3 * std::sin(0.2 * i);
  dsp::WriteWav(dir.File("in.wav"), w);
  EXPECT_EQ(Esf("augment in.wav out.wav --vtlp-alpha 0.9 --simulate --seed 3", dir.path()).code, 0);
  EXPECT_EQ(dsp::ReadWav(dir.File("out.wav")).size(), w.size());
  EXPECT_EQ(Esf("augment in.wav bad.wav --vtlp-alpha 2.5", dir.path()).code, kExitData);

  const Result r = Esf("features in.wav --kind mfcc", dir.path());
  EXPECT_EQ(r.code, 0);
  const size_t first_line = r.out.find('\n');
  ASSERT_NE(first_line, std::string::npos);
  EXPECT_EQ(std::count(r.out.begin(), r.out.begin() + first_line, ','), 12);
}

TEST(CliTest, Decode) {
  testing::TempDir dir("cli");
  {
    std::ofstream out(dir.File("am.json"));
    out << R"({"type": "table", "vocab_size": 4, "entries": {
      "": [-1e9, -1e9, -1e9, 0], "3": [-1e9, -1e9, 0, -1e9], "*": [-1e9, -1e9, 0, -1e9]}})";
  }
  const Result r = Esf("decode --am am.json --beam 2 --max-len 4", dir.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("tokens 1 3 2"), std::string::npos) << r.out;
  EXPECT_EQ(Esf("decode --am am.json --lambda-lm 0.5", dir.path()).code, kExitUsage);
  EXPECT_EQ(Esf("decode --am nothere.json", dir.path()).code, kExitData);
}

}  // namespace
}  // namespace esf::cli
