// tests/exserver_test.cc

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

#include "esf/exserver.h"

#include <gtest/gtest.h>

#include <chrono>
#include <set>
#include <thread>

#include "esf/bytes.h"
#include "esf/error.h"
#include "esf/random.h"
#include "test_util.h"

namespace esf::exserver {
namespace {

using pipeline::Batch;

Batch RandomBatch(Rng& rng) {
  Batch b;
  b.sequence = rng.Bits();
  b.batch_size = 1 + rng.Below(4);
  b.max_frames = rng.Below(20);
  b.feature_dim = 1 + rng.Below(8);
  b.max_labels = rng.Below(10);
  b.features.resize(size_t(b.batch_size) * b.max_frames * b.feature_dim);
  for (auto& v : b.features) v = static_cast<float>(rng.Gaussian());
  b.labels.resize(size_t(b.batch_size) * b.max_labels);
  for (auto& v : b.labels) v = static_cast<int32_t>(rng.Below(40));
  for (uint32_t i = 0; i < b.batch_size; ++i) {
    b.feature_lengths.push_back(rng.Below(b.max_frames + 1));
    b.label_lengths.push_back(rng.Below(b.max_labels + 1));
    b.utt_ids.push_back("utt-" + std::to_string(rng.Below(1000)));
  }
  return b;
}

TEST(FrameTest, RoundTripAndIncomplete) {
  const std::string wire = EncodeFrame(MsgType::kCredit, "abcd");
  EXPECT_EQ(wire.size(), kFrameHeaderSize + 4 + 4);
  size_t consumed = 0;
  for (size_t n = 0; n < wire.size(); ++n) {
    EXPECT_FALSE(DecodeFrame(std::string_view(wire).substr(0, n), &consumed).has_value());
  }
  const auto f = DecodeFrame(wire + "extra", &consumed);
  ASSERT_TRUE(f.has_value());
  EXPECT_EQ(f->type, MsgType::kCredit);
  EXPECT_EQ(f->payload, "abcd");
  EXPECT_EQ(consumed, wire.size());
}

TEST(FrameTest, BadHeaderIsProtocolError) {
  std::string wire = EncodeFrame(MsgType::kBatch, "x");
  wire[0] = 'X';
  size_t consumed;
  try {
    DecodeFrame(wire, &consumed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
  std::string bad_type = EncodeFrame(MsgType::kBatch, "x");
  bad_type[5] = 42;
  EXPECT_THROW(DecodeFrame(bad_type, &consumed), Error);
}

TEST(FrameTest, EveryPayloadBitFlipIsDetected) {
  Rng rng(1);
  const std::string payload = EncodeBatch(RandomBatch(rng));
  const std::string wire = EncodeFrame(MsgType::kBatch, payload);
  for (size_t byte = kFrameHeaderSize; byte < wire.size(); ++byte) {
    std::string bad = wire;
    bad[byte] ^= static_cast<char>(1 << (byte % 8));
    size_t consumed;
    try {
      DecodeFrame(bad, &consumed);
      ADD_FAILURE() << "flip at " << byte << " undetected";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kCorruption);
    }
  }
}

TEST(BatchCodecTest, RoundTrip) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Batch b = RandomBatch(rng);
    const std::string enc = EncodeBatch(b);
    EXPECT_EQ(DecodeBatch(enc), b);
    EXPECT_EQ(EncodeBatch(DecodeBatch(enc)), enc);
  }
}

TEST(BatchCodecTest, InconsistentSizesRejected) {
  Rng rng(3);
  Batch b = RandomBatch(rng);
  b.feature_dim += 1;
  EXPECT_THROW(DecodeBatch(EncodeBatch(b)), Error);
  std::string enc = EncodeBatch(RandomBatch(rng));
  enc.resize(enc.size() - 3);
  EXPECT_THROW(DecodeBatch(enc), Error);
}

TEST(EndpointTest, Parse) {
  EXPECT_EQ(ParseEndpoint("127.0.0.1:8080"), (Endpoint{"127.0.0.1", 8080}));
  EXPECT_EQ(ParseEndpoint("localhost:0").port, 0);
  EXPECT_THROW(ParseEndpoint("nohost"), Error);
  EXPECT_THROW(ParseEndpoint("h:99999"), Error);
  EXPECT_EQ((Endpoint{"h", 5}).ToString(), "h:5");
}

TEST(StatsTest, RoundTrip) {
  const ServerStats s{7, 3, 1};
  const ServerStats t = DecodeStats(EncodeStats(s));
  EXPECT_EQ(t.batches_sent, 7u);
  EXPECT_EQ(t.buffered, 3u);
  EXPECT_EQ(t.epoch, 1u);
}

TEST(PartitionTest, DisjointCover) {
  std::vector<std::string> all;
  for (int i = 0; i < 23; ++i) all.push_back("s" + std::to_string(i));
  for (size_t servers : {1u, 2u, 3u}) {
    for (size_t pipes : {1u, 2u, 4u}) {
      std::multiset<std::string> seen;
      for (size_t j = 0; j < servers; ++j) {
        for (size_t p = 0; p < pipes; ++p) {
          for (const auto& s : AssignedShards(all, j, servers, p, pipes)) seen.insert(s);
        }
      }
      EXPECT_EQ(seen, std::multiset<std::string>(all.begin(), all.end()));
    }
  }
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    pipeline::SyntheticCorpusConfig sc;
    sc.num_utterances = 10;
    sc.min_seconds = 0.2;
    sc.max_seconds = 0.4;
    corpus_ = pipeline::SyntheticCorpus(sc);
    shards_ = recordio::WriteShards(corpus_, 4, dir_.File("x-{}.esrd")).shard_paths;
  }

  ServerConfig Config(size_t pipelines = 1) {
    ServerConfig cfg;
    cfg.bind = Endpoint{"127.0.0.1", 0};
    cfg.num_pipelines = pipelines;
    cfg.pipeline.shard_paths = shards_;
    cfg.pipeline.batch_size = 2;
    cfg.augment.enable_vtlp = false;
    cfg.augment.enable_simulation = false;
    return cfg;
  }

  testing::TempDir dir_{"exserver"};
  std::vector<recordio::UtteranceRecord> corpus_;
  std::vector<std::string> shards_;
};

TEST_F(ServerTest, OneEpochOfFiveBatches) {
  ExampleServer server(Config());
  const Endpoint ep = server.Start();
  ConsumerClient client(ep);
  std::vector<Batch> got;
  while (auto b = client.Next()) got.push_back(std::move(*b));
  ASSERT_EQ(got.size(), 5u);
  std::multiset<std::string> ids;
  for (size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].sequence, i);
    ids.insert(got[i].utt_ids.begin(), got[i].utt_ids.end());
  }
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 10u);
  EXPECT_EQ(client.epochs_completed(), 1u);
  EXPECT_FALSE(client.Next().has_value());
  // The server keeps answering STATS until the consumer hangs up.
  EXPECT_EQ(client.RequestStats().batches_sent, 5u);
  client.Close();
  server.Wait();
}

TEST_F(ServerTest, SequencesContinueAcrossEpochs) {
  ServerConfig cfg = Config();
  cfg.epochs = 2;
  ExampleServer server(cfg);
  ConsumerClient client(server.Start());
  uint64_t expected = 0;
  while (auto b = client.Next()) EXPECT_EQ(b->sequence, expected++);
  EXPECT_EQ(expected, 10u);
  EXPECT_EQ(client.epochs_completed(), 2u);
}

TEST_F(ServerTest, TwoPipelinesPartitionTheCorpus) {
  ExampleServer server(Config(2));
  const Endpoint ep = server.Start();
  ConsumerClient::Options o0, o1;
  o0.pipeline = 0;
  o1.pipeline = 1;
  ConsumerClient c0(ep, o0), c1(ep, o1);
  std::multiset<std::string> ids0, ids1;
  while (auto b = c0.Next()) ids0.insert(b->utt_ids.begin(), b->utt_ids.end());
  while (auto b = c1.Next()) ids1.insert(b->utt_ids.begin(), b->utt_ids.end());
  EXPECT_FALSE(ids0.empty());
  EXPECT_FALSE(ids1.empty());
  std::multiset<std::string> all = ids0;
  all.insert(ids1.begin(), ids1.end());
  std::multiset<std::string> want;
  for (const auto& r : corpus_) want.insert(r.utt_id);
  EXPECT_EQ(all, want);
}

TEST_F(ServerTest, BusyPipelineIsRefused) {
  ExampleServer server(Config(1));
  const Endpoint ep = server.Start();
  ConsumerClient::Options o;
  o.pipeline = 0;
  o.initial_credits = 0;
  ConsumerClient first(ep, o);
  try {
    ConsumerClient second(ep, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
  }
  server.Stop();
}

TEST_F(ServerTest, StalledConsumerBoundsBuffer) {
  for (uint32_t k : {1u, 2u, 3u}) {
    ServerConfig cfg = Config();
    cfg.max_credits = k;
    ExampleServer server(cfg);
    const Endpoint ep = server.Start();
    ConsumerClient::Options o;
    o.max_credits = k;
    o.initial_credits = 0;
    o.auto_credit = false;
    ConsumerClient client(ep, o);
    uint64_t peak = 0;
    for (int i = 0; i < 20; ++i) {
      const ServerStats s = client.RequestStats();
      peak = std::max(peak, s.buffered);
      EXPECT_EQ(s.batches_sent, 0u);
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    EXPECT_EQ(peak, std::min<uint64_t>(k, 5));
    // Releasing credits drains the stream.
    client.Grant(k);
    size_t got = 0;
    while (got < k) {
      ASSERT_TRUE(client.Next().has_value());
      ++got;
    }
    server.Stop();
  }
}

TEST_F(ServerTest, VersionMismatchIsRefused) {
  ExampleServer server(Config());
  const Endpoint ep = server.Start();
  ConsumerClient::Options o;
  o.protocol_version = 99;
  try {
    ConsumerClient client(ep, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kProtocol);
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  server.Stop();
}

TEST_F(ServerTest, MalformedCreditGetsErrorFrame) {
  ExampleServer server(Config());
  const Endpoint ep = server.Start();
  Socket sock = Socket::Connect(ep);
  WriteFrame(sock, MsgType::kHello, R"({"version":1,"pipeline":-1,"max_credits":4})");
  auto hello = ReadFrame(sock);
  ASSERT_TRUE(hello.has_value());
  EXPECT_EQ(hello->type, MsgType::kHello);
  WriteFrame(sock, MsgType::kCredit, "xy");
  std::optional<Frame> f;
  while ((f = ReadFrame(sock)) && f->type != MsgType::kError) {
  }
  ASSERT_TRUE(f.has_value());
  EXPECT_EQ(f->type, MsgType::kError);
  server.Stop();
}

TEST_F(ServerTest, ServerLossIsDeliveryError) {
  ExampleServer server(Config());
  const Endpoint ep = server.Start();
  ConsumerClient::Options o;
  o.initial_credits = 1;
  o.auto_credit = false;
  ConsumerClient client(ep, o);
  ASSERT_TRUE(client.Next().has_value());
  server.Stop();
  try {
    client.Next();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDelivery);
  }
}

TEST_F(ServerTest, MergedSourceCoversBothServers) {
  for (bool idle : {false, true}) {
    ServerConfig c0 = Config(), c1 = Config();
    c0.num_servers = c1.num_servers = 2;
    c1.server_index = 1;
    ExampleServer s0(c0), s1(c1);
    ConsumerClient::Options o;
    o.idle_reader = idle;
    std::vector<std::unique_ptr<ConsumerClient>> clients;
    clients.push_back(std::make_unique<ConsumerClient>(s0.Start(), o));
    clients.push_back(std::make_unique<ConsumerClient>(s1.Start(), o));
    MergedBatchSource merged(std::move(clients), idle);
    std::multiset<std::string> ids;
    while (auto b = merged.Next()) ids.insert(b->utt_ids.begin(), b->utt_ids.end());
    EXPECT_EQ(ids.size(), 10u) << "idle " << idle;
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 10u);
  }
}

TEST(ServerConfigTest, Validation) {
  ServerConfig cfg;
  EXPECT_THROW(cfg.Validate(), Error);  // no shards
  cfg.pipeline.shard_paths = {"a"};
  cfg.Validate();
  cfg.server_index = 1;
  EXPECT_THROW(cfg.Validate(), Error);
}

TEST(ConnectTest, RefusedIsNetworkError) {
  ConsumerClient::Options o;
  o.connect_timeout_s = 0.2;
  try {
    ConsumerClient client(Endpoint{"127.0.0.1", 1}, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNetwork);
  }
}

}  // namespace
}  // namespace esf::exserver
