// tests/trainsim_test.cc

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

#include "esf/trainsim.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "esf/error.h"
#include "esf/random.h"
#include "test_util.h"

namespace esf::trainsim {
namespace {

bool BitwiseEqual(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<std::vector<double>> RandomInputs(Rng& rng, size_t workers, size_t n) {
  std::vector<std::vector<double>> in(workers, std::vector<double>(n));
  // Mixed magnitudes make the sum sensitive to evaluation order.
  for (auto& v : in) {
    for (auto& x : v) x = rng.Gaussian() * std::pow(10.0, rng.Uniform(-8, 8));
  }
  return in;
}

TEST(TSessionTest, Basics) {
  EXPECT_EQ(TSession(1.0, 2.0), 0.5);
  EXPECT_EQ(TSession(0.0, 0.0), 0.0);
  EXPECT_EQ(TSession(3.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(ComputeBoundTSession(100, 0.02, 0.5), 2.0 / 2.5);
}

TEST(ConsumeEpochTest, CountsAndSessionTime) {
  std::vector<pipeline::Batch> batches(10);
  for (auto& b : batches) b.batch_size = 3;
  pipeline::VectorSource<pipeline::Batch> src(batches);
  const ThroughputStats s = ConsumeEpoch(src, 0.005);
  EXPECT_TRUE(s.complete);
  EXPECT_EQ(s.batches, 10u);
  EXPECT_EQ(s.utterances, 30u);
  EXPECT_GE(s.session_time, 0.05 - 1e-3);
  EXPECT_GE(s.elapsed_time, s.session_time);
  EXPECT_GT(s.t_session, 0.8);
}

class FailingSource : public pipeline::Source<pipeline::Batch> {
 public:
  std::optional<pipeline::Batch> Next() override {
    if (n_++ < 2) return pipeline::Batch{};
    Fail(ErrorKind::kDelivery, "lost");
  }

 private:
  int n_ = 0;
};

TEST(ConsumeEpochTest, ReportsIncompleteStream) {
  FailingSource src;
  const ThroughputStats s = ConsumeEpoch(src, 0.0);
  EXPECT_FALSE(s.complete);
  EXPECT_EQ(s.batches, 2u);
  EXPECT_NE(s.error.find("lost"), std::string::npos);
}

TEST(AllreduceTest, DirectSumIsLeftFold) {
  Rng rng(1);
  const auto in = RandomInputs(rng, 5, 17);
  const auto sum = DirectSum(in);
  for (size_t i = 0; i < 17; ++i) {
    double acc = in[0][i];
    for (size_t w = 1; w < 5; ++w) acc += in[w][i];
    EXPECT_EQ(sum[i], acc);
  }
}

TEST(AllreduceTest, RingEqualsDirectSumBitwise) {
  Rng rng(2);
  for (size_t workers : {1u, 2u, 3u, 5u, 8u}) {
    for (size_t n : {1u, 7u, 64u, 1001u}) {
      const auto in = RandomInputs(rng, workers, n);
      const auto want = DirectSum(in);
      for (size_t start = 0; start < workers; ++start) {
        const auto out = RingAllreduce(in, start);
        ASSERT_EQ(out.size(), workers);
        for (size_t w = 0; w < workers; ++w) {
          EXPECT_TRUE(BitwiseEqual(out[w], want)) << "W=" << workers << " n=" << n << " start=" << start << " worker " << w;
        }
      }
    }
  }
}

TEST(AllreduceTest, FewerElementsThanWorkers) {
  std::vector<std::vector<double>> in{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}, {7.0, 8.0}, {9.0, 10.0}};
  for (const auto& v : RingAllreduce(in)) EXPECT_EQ(v, (std::vector<double>{25.0, 30.0}));
}

TEST(AllreduceTest, LengthMismatch) {
  try {
    RingAllreduce({{1.0, 2.0}, {1.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kArgument);
  }
}

TEST(ClipTest, WorkedCases) {
  std::vector<GradientVector> g{{{3.0}, 0}, {{4.0}, 1}};
  ClipResult r = ClipByGlobalNorm(g, 5.0);
  EXPECT_EQ(r.global_norm, 5.0);
  EXPECT_EQ(r.scale, 1.0);
  EXPECT_EQ(g[0].values[0], 3.0);
  EXPECT_EQ(g[1].values[0], 4.0);
  r = ClipByGlobalNorm(g, 2.5);
  EXPECT_EQ(r.scale, 0.5);
  EXPECT_DOUBLE_EQ(g[0].values[0], 1.5);
  EXPECT_DOUBLE_EQ(g[1].values[0], 2.0);
}

TEST(ClipTest, PostNormIsMinOfNormAndClip) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<GradientVector> g(1 + rng.Below(4));
    for (size_t w = 0; w < g.size(); ++w) {
      g[w].worker_id = w;
      g[w].values.resize(1 + rng.Below(20));
      for (auto& x : g[w].values) x = rng.Gaussian() * 3.0;
    }
    const double clip = rng.Uniform(0.1, 20.0);
    const double before = GlobalNorm(g);
    ClipByGlobalNorm(g, clip);
    EXPECT_NEAR(GlobalNorm(g), std::min(before, clip), 1e-12 * std::max(1.0, clip));
  }
}

TEST(ClipTest, NonFiniteNamesWorker) {
  std::vector<GradientVector> g{{{1.0}, 0}, {{std::nan("")}, 7}};
  try {
    ClipByGlobalNorm(g, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDomain);
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

TEST(MedianTest, OddAndEven) {
  EXPECT_EQ(Median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(Median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(Median({}), Error);
}

TEST(BenchCsvTest, Format) {
  BenchRow row{2, 2, 1.0, 1.23456, 0.5, 42};
  EXPECT_EQ(BenchCsvRow(row), "2,2,1.0000,1.2346,0.5000,42");
  EXPECT_EQ(BenchCsv({row}).rfind(kBenchCsvHeader, 0), 0u);
}

TEST(BenchTest, SmallRun) {
  testing::TempDir dir("bench");
  BenchConfig cfg;
  cfg.servers = {1, 2};
  cfg.repeats = 1;
  cfg.num_utterances = 40;
  cfg.num_shards = 8;
  cfg.step_cost_s = 0.005;
  cfg.production_cost_s = 0.0;
  cfg.work_dir = dir.path();
  cfg.esf_binary = ESF_BINARY;
  const auto rows = BenchScaling(cfg);
  ASSERT_EQ(rows.size(), 2u);
  // Five utterances per shard; each (server, consumer) stream pads its own
  // last batch: 2 streams of 20 at S=1, 4 streams of 10 at S=2.
  EXPECT_EQ(rows[0].batches, 10u);
  EXPECT_EQ(rows[1].batches, 12u);
  for (const auto& r : rows) {
    EXPECT_GT(r.epoch_time_s, 0.0);
    EXPECT_GT(r.t_session, 0.0);
    EXPECT_LE(r.t_session, 1.0);
  }
  EXPECT_EQ(rows[1].ratio, 1.0);
}

}  // namespace
}  // namespace esf::trainsim
