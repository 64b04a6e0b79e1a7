// tests/recordio_test.cc

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

#include "esf/recordio.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "esf/bytes.h"
#include "esf/error.h"
#include "esf/random.h"
#include "test_util.h"

namespace esf::recordio {
namespace {

UtteranceRecord MakeRecord(int i, Rng& rng) {
  UtteranceRecord r;
  r.utt_id = "utt-" + std::to_string(i);
  r.sample_rate = i % 2 ? 8000 : 16000;
  r.samples.resize(rng.Below(500));
  for (auto& s : r.samples) s = static_cast<int16_t>(static_cast<int>(rng.Below(65536)) - 32768);
  r.transcript = "hello world " + std::to_string(i);
  if (i % 3 == 0) r.metadata = {{"speaker", "s" + std::to_string(i)}, {"k=v", "a\tb"}};
  return r;
}

std::string ReadAll(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void WriteAll(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << data;
}

TEST(RecordCodecTest, RoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const UtteranceRecord r = MakeRecord(i, rng);
    EXPECT_EQ(DecodeRecord(EncodeRecord(r)), r);
  }
}

TEST(RecordCodecTest, SkipsUnknownTags) {
  Rng rng(2);
  const UtteranceRecord r = MakeRecord(4, rng);
  std::string payload = EncodeRecord(r);
  PutTlv(&payload, 200, "future field");
  EXPECT_EQ(DecodeRecord(payload), r);
}

TEST(RecordCodecTest, RejectsMissingId) {
  UtteranceRecord r;
  EXPECT_THROW(EncodeRecord(r), Error);
}

TEST(MetadataTest, SetAndGet) {
  UtteranceRecord r;
  EXPECT_FALSE(r.Meta("a").has_value());
  r.SetMeta("a", "1");
  r.SetMeta("b", "2");
  r.SetMeta("a", "3");
  EXPECT_EQ(r.Meta("a"), "3");
  EXPECT_EQ(r.metadata.size(), 2u);
}

TEST(ShardPathTest, ExpandsPlaceholder) {
  EXPECT_EQ(ShardPath("data/shard-{}.esrd", 7), "data/shard-00007.esrd");
}

TEST(ShardTest, WriteShardsRoundRobin) {
  testing::TempDir dir("recordio");
  Rng rng(3);
  std::vector<UtteranceRecord> records;
  for (int i = 0; i < 11; ++i) records.push_back(MakeRecord(i, rng));
  const ShardSet set = WriteShards(records, 3, dir.File("s-{}.esrd"));
  ASSERT_EQ(set.num_shards(), 3u);
  for (size_t s = 0; s < 3; ++s) {
    const auto got = ReadShard(set.shard_paths[s]);
    std::vector<UtteranceRecord> want;
    for (size_t i = s; i < records.size(); i += 3) want.push_back(records[i]);
    EXPECT_EQ(got, want) << "shard " << s;
  }
}

TEST(ShardTest, EmptyShardHasOnlyHeader) {
  testing::TempDir dir("recordio");
  const ShardSet set = WriteShards({}, 2, dir.File("e-{}.esrd"));
  EXPECT_EQ(std::filesystem::file_size(set.shard_paths[0]), kShardHeaderSize);
  EXPECT_TRUE(ReadShard(set.shard_paths[1]).empty());
}

class CorruptionTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(4);
    for (int i = 0; i < 3; ++i) records_.push_back(MakeRecord(i, rng));
    path_ = dir_.File("c.esrd");
    ShardWriter w(path_);
    for (const auto& r : records_) w.Write(r);
    w.Close();
    bytes_ = ReadAll(path_);
    second_frame_ = kShardHeaderSize + kFrameOverhead + EncodeRecord(records_[0]).size();
  }

  // Reads every record; returns the error.
  Error ReadExpectingError() {
    ShardReader reader(path_);
    try {
      while (reader.Next()) {
      }
    } catch (const Error& e) {
      return e;
    }
    ADD_FAILURE() << "no error raised";
    return Error(ErrorKind::kArgument, "none");
  }

  testing::TempDir dir_{"corrupt"};
  std::vector<UtteranceRecord> records_;
  std::string path_, bytes_;
  size_t second_frame_ = 0;
};

TEST_F(CorruptionTest, PayloadBitFlip) {
  bytes_[second_frame_ + 12 + 3] ^= 0x10;
  WriteAll(path_, bytes_);
  const Error e = ReadExpectingError();
  EXPECT_EQ(e.kind(), ErrorKind::kCorruption);
  EXPECT_EQ(e.offset(), second_frame_);
}

TEST_F(CorruptionTest, LengthBitFlip) {
  bytes_[second_frame_ + 1] ^= 0x01;
  WriteAll(path_, bytes_);
  const Error e = ReadExpectingError();
  EXPECT_EQ(e.kind(), ErrorKind::kCorruption);
  EXPECT_EQ(e.offset(), second_frame_);
}

TEST_F(CorruptionTest, TruncatedTail) {
  WriteAll(path_, bytes_.substr(0, bytes_.size() - 3));
  ShardReader reader(path_);
  EXPECT_EQ(reader.Next(), records_[0]);
  EXPECT_EQ(reader.Next(), records_[1]);
  try {
    reader.Next();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTruncation);
  }
}

TEST_F(CorruptionTest, BadMagic) {
  bytes_[0] = 'X';
  WriteAll(path_, bytes_);
  try {
    ShardReader reader(path_);
    reader.Next();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  }
}

TEST(PcmTest, Scaling) {
  const std::vector<int16_t> pcm{-32768, 0, 16384, 32767};
  const auto f = PcmToFloat(pcm);
  EXPECT_EQ(f[0], -1.0);
  EXPECT_EQ(f[2], 0.5);
  EXPECT_EQ(FloatToPcm(f), pcm);
  const std::vector<double> loud{2.0, -2.0};
  EXPECT_EQ(FloatToPcm(loud), (std::vector<int16_t>{32767, -32768}));
}

}  // namespace
}  // namespace esf::recordio
