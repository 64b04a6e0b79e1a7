// tests/pipeline_test.cc

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

#include "esf/pipeline.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "esf/error.h"
#include "test_util.h"

namespace esf::pipeline {
namespace {

using Strings = std::vector<std::string>;

typename InterleaveSource<std::string>::Opener Open(Strings items) {
  return [items] { return std::make_unique<VectorSource<std::string>>(items); };
}

TEST(InterleaveTest, HandWorkedExample) {
  InterleaveSource<std::string> src({Open({"A1"}), Open({"B1", "B2", "B3"}), Open({"C1", "C2"})}, 2);
  EXPECT_EQ(Drain(src), (Strings{"A1", "B1", "C1", "B2", "C2", "B3"}));
}

TEST(InterleaveTest, CycleOneIsConcatenation) {
  InterleaveSource<std::string> src({Open({"a", "b"}), Open({}), Open({"c"})}, 1);
  EXPECT_EQ(Drain(src), (Strings{"a", "b", "c"}));
}

TEST(InterleaveTest, CycleLargerThanInputs) {
  InterleaveSource<std::string> src({Open({"a", "b"}), Open({"c", "d"})}, 10);
  EXPECT_EQ(Drain(src), (Strings{"a", "c", "b", "d"}));
}

TEST(InterleaveTest, OpensLazily) {
  int opened = 0;
  auto counting = [&opened](Strings items) {
    return [&opened, items] {
      ++opened;
      return std::make_unique<VectorSource<std::string>>(items);
    };
  };
  InterleaveSource<std::string> src({counting({"a"}), counting({"b"}), counting({"c"})}, 1);
  EXPECT_EQ(opened, 0);
  src.Next();
  EXPECT_EQ(opened, 1);
}

TEST(ShuffleTest, IsPermutation) {
  std::vector<int> items(100);
  for (int i = 0; i < 100; ++i) items[i] = i;
  ShuffleSource<int> src(std::make_unique<VectorSource<int>>(items), 16, 5);
  auto out = Drain(src);
  EXPECT_NE(out, items);
  std::sort(out.begin(), out.end());
  EXPECT_EQ(out, items);
}

TEST(ShuffleTest, BufferOneKeepsOrder) {
  std::vector<int> items{3, 1, 2};
  ShuffleSource<int> src(std::make_unique<VectorSource<int>>(items), 1, 5);
  EXPECT_EQ(Drain(src), items);
}

TEST(ShuffleTest, UniformOverPermutations) {
  const int trials = 10000;
  std::map<std::vector<int>, int> counts;
  for (int seed = 0; seed < trials; ++seed) {
    ShuffleSource<int> src(std::make_unique<VectorSource<int>>(std::vector<int>{0, 1, 2}), 3, seed);
    ++counts[Drain(src)];
  }
  ASSERT_EQ(counts.size(), 6u);
  double chi2 = 0.0;
  const double expected = trials / 6.0;
  for (const auto& [perm, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  // 99th percentile of chi-square with 5 degrees of freedom.
  EXPECT_LT(chi2, 15.086);
}

TEST(MapTest, OrderAndWidthIndependence) {
  std::vector<int> items(203);
  for (int i = 0; i < 203; ++i) items[i] = i;
  auto run = [&items](size_t width) {
    MapSource<int> src(std::make_unique<VectorSource<int>>(items), [](int x) { return x * x; }, width);
    return Drain(src);
  };
  const auto one = run(1);
  ASSERT_EQ(one.size(), items.size());
  for (int i = 0; i < 203; ++i) EXPECT_EQ(one[i], i * i);
  EXPECT_EQ(run(2), one);
  EXPECT_EQ(run(8), one);
}

TEST(MapTest, SkipPolicyCounts) {
  auto stats = std::make_shared<MapStats>();
  MapSource<int> src(std::make_unique<VectorSource<int>>(std::vector<int>{1, 2, 3, 4, 5, 6}),
                     [](int x) {
                       if (x % 3 == 0) Fail(ErrorKind::kDomain, "bad");
                       return x;
                     },
                     3, MapFailurePolicy::kSkip, stats);
  EXPECT_EQ(Drain(src), (std::vector<int>{1, 2, 4, 5}));
  EXPECT_EQ(stats->skipped.load(), 2u);
  EXPECT_EQ(stats->processed.load(), 4u);
}

TEST(MapTest, FatalPolicyRethrows) {
  MapSource<int> src(std::make_unique<VectorSource<int>>(std::vector<int>{1, 2, 3}),
                     [](int x) {
                       if (x == 2) Fail(ErrorKind::kDomain, "bad");
                       return x;
                     },
                     2, MapFailurePolicy::kFatal);
  EXPECT_THROW(Drain(src), Error);
}

TEST(TokenizerTest, DefaultRoundTrip) {
  const Tokenizer tok = Tokenizer::Default();
  EXPECT_EQ(tok.pad_id(), 0);
  const std::string text = "it's a test";
  const auto ids = tok.Encode(text);
  EXPECT_EQ(ids.size(), text.size());
  EXPECT_EQ(tok.Decode(ids), text);
  const auto labels = tok.Labels(text);
  EXPECT_EQ(labels.back(), tok.eos_id());
  EXPECT_EQ(tok.Decode(labels), text);
  EXPECT_EQ(tok.Encode("Z")[0], tok.unk_id());
}

TEST(TokenizerTest, FileRoundTripWithMultibyte) {
  testing::TempDir dir("tok");
  const Tokenizer tok({"<pad>", "<s>", "</s>", "<unk>", " ", "a", "é", "ß"});
  tok.Save(dir.File("vocab.txt"));
  const Tokenizer back = Tokenizer::FromFile(dir.File("vocab.txt"));
  EXPECT_EQ(back.size(), tok.size());
  const auto ids = back.Encode("aé ß");
  EXPECT_EQ(ids, (std::vector<int32_t>{5, 6, 4, 7}));
  EXPECT_EQ(back.Decode(ids), "aé ß");
}

TEST(TokenizerTest, RejectsBadVocabulary) {
  EXPECT_THROW(Tokenizer({"<s>", "<pad>", "</s>", "<unk>"}), Error);
  EXPECT_THROW(Tokenizer({"<pad>", "<s>", "</s>"}), Error);
  EXPECT_THROW(Tokenizer({"<pad>", "<s>", "</s>", "<unk>", "a", "a"}), Error);
}

Example MakeExample(const std::string& id, size_t frames, size_t dim, std::vector<int32_t> labels) {
  Example ex;
  ex.record.utt_id = id;
  ex.features.num_frames = frames;
  ex.features.num_coeffs = dim;
  for (size_t i = 0; i < frames * dim; ++i) ex.features.values.push_back(1.0 + i);
  ex.labels = std::move(labels);
  return ex;
}

TEST(PaddedBatchTest, Layout) {
  std::vector<Example> group{MakeExample("a", 2, 3, {5, 6, 2}), MakeExample("b", 4, 3, {7, 2})};
  const Batch b = MakePaddedBatch(group, -1.0f, 9);
  EXPECT_EQ(b.sequence, 9u);
  EXPECT_EQ(b.batch_size, 2u);
  EXPECT_EQ(b.max_frames, 4u);
  EXPECT_EQ(b.feature_dim, 3u);
  EXPECT_EQ(b.max_labels, 3u);
  EXPECT_EQ(b.feature_lengths, (std::vector<uint32_t>{2, 4}));
  EXPECT_EQ(b.label_lengths, (std::vector<uint32_t>{3, 2}));
  EXPECT_EQ(b.feature(0, 1, 2), 6.0f);
  EXPECT_EQ(b.feature(0, 2, 0), -1.0f);
  EXPECT_EQ(b.feature(1, 3, 2), 12.0f);
  EXPECT_EQ(b.label(1, 1), 2);
  EXPECT_EQ(b.label(1, 2), 0);
  EXPECT_EQ(b.utt_ids, (Strings{"a", "b"}));
}

TEST(PaddedBatchTest, ShortLastBatch) {
  std::vector<Example> items;
  for (int i = 0; i < 5; ++i) items.push_back(MakeExample(std::to_string(i), 1, 1, {2}));
  PaddedBatchSource src(std::make_unique<VectorSource<Example>>(std::move(items)), 2, 0.0f);
  const auto batches = Drain(src);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].batch_size, 1u);
  EXPECT_EQ(batches[2].sequence, 2u);
}

class BuiltPipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticCorpusConfig sc;
    sc.num_utterances = 40;
    sc.max_seconds = 0.8;
    corpus_ = SyntheticCorpus(sc);
    shards_ = recordio::WriteShards(corpus_, 5, dir_.File("p-{}.esrd"));
  }

  std::vector<Batch> Run(uint64_t seed, size_t width, uint64_t epoch = 0) {
    PipelineConfig cfg;
    cfg.shard_paths = shards_.shard_paths;
    cfg.seed = seed;
    cfg.epoch = epoch;
    cfg.parallel_map_width = width;
    cfg.batch_size = 6;
    Pipeline p = BuildPipeline(cfg, AugmentConfig{});
    auto out = Drain(*p.batches);
    EXPECT_EQ(p.stats->skipped(), 0u);
    return out;
  }

  testing::TempDir dir_{"pipeline"};
  std::vector<recordio::UtteranceRecord> corpus_;
  recordio::ShardSet shards_;
};

TEST_F(BuiltPipelineTest, DeterministicAndExactlyOnce) {
  const auto a = Run(3, 1);
  EXPECT_EQ(Run(3, 1), a);
  EXPECT_EQ(Run(3, 2), a);
  std::multiset<std::string> seen;
  for (const auto& b : a) seen.insert(b.utt_ids.begin(), b.utt_ids.end());
  std::multiset<std::string> want;
  for (const auto& r : corpus_) want.insert(r.utt_id);
  EXPECT_EQ(seen, want);
  EXPECT_EQ(a.size(), 7u);
}

TEST_F(BuiltPipelineTest, SeedAndEpochChangeTheStream) {
  const auto a = Run(3, 1);
  EXPECT_NE(Run(4, 1), a);
  EXPECT_NE(Run(3, 1, 1), a);
}

TEST(SyntheticCorpusTest, Shape) {
  SyntheticCorpusConfig sc;
  sc.num_utterances = 10;
  const auto corpus = SyntheticCorpus(sc);
  ASSERT_EQ(corpus.size(), 10u);
  EXPECT_EQ(corpus[3].utt_id, "utt-000003");
  for (const auto& r : corpus) {
    EXPECT_GE(r.samples.size(), size_t(0.5 * 16000) - 1);
    EXPECT_LE(r.samples.size(), size_t(1.5 * 16000) + 1);
    EXPECT_FALSE(r.transcript.empty());
  }
  EXPECT_EQ(SyntheticCorpus(sc), corpus);
}

TEST(PipelineConfigTest, Validation) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg.shard_paths = {"x"};
  cfg.Validate();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.Validate(), Error);
}

TEST(PipelineErrorTest, CorruptShardNamesThePath) {
  testing::TempDir dir("pipeline-bad");
  const std::string path = dir.File("bad.esrd");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE!";
  }
  PipelineConfig cfg;
  cfg.shard_paths = {path};
  try {
    Pipeline p = BuildPipeline(cfg, AugmentConfig{});
    Drain(*p.batches);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
}

}  // namespace
}  // namespace esf::pipeline
