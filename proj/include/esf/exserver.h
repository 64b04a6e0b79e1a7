// include/esf/exserver.h

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

#ifndef ESF_EXSERVER_H_
#define ESF_EXSERVER_H_

// Example servers stream ready batches to consumers over TCP with
// credit-based flow control.
//
// Frame:  "ESRV" u8(version=1) u8(type) u32 LE payload length
//         payload  u32 LE CRC32C of payload
//
// A consumer opens with HELLO (JSON: version, pipeline, max_credits) and the
// server answers with its assignment.  The consumer then grants CREDITs (u32
// count); the server sends one BATCH per credit, an END (JSON: epoch, final)
// after the last batch of every epoch, and answers STATS requests with
// {batches_sent, buffered, epoch}.  ERROR carries a UTF-8 message and is
// followed by close.

#include <sys/types.h>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "esf/pipeline.h"

namespace esf::exserver {

inline constexpr char kWireMagic[4] = {'E', 'S', 'R', 'V'};
inline constexpr uint8_t kWireVersion = 1;
inline constexpr size_t kFrameHeaderSize = 10;
inline constexpr uint32_t kMaxPayload = 64u << 20;
inline constexpr uint32_t kDefaultMaxCredits = 4;

enum class MsgType : uint8_t {
  kHello = 1,
  kCredit = 2,
  kBatch = 3,
  kStats = 4,
  kEnd = 5,
  kError = 6,
};

const char* MsgTypeName(MsgType type);

struct Frame {
  MsgType type = MsgType::kError;
  std::string payload;
};

std::string EncodeFrame(MsgType type, std::string_view payload);

// Parses one frame from the front of `data`.  Returns nullopt when more bytes
// are needed; throws kProtocol for a bad header and kCorruption for a CRC
// mismatch.
std::optional<Frame> DecodeFrame(std::string_view data, size_t* consumed);

// TLV: 1=sequence(u64) 2=shape(u32 B,T,F,L) 3=features(f32) 4=feature
// lengths(u32) 5=labels(i32) 6=label lengths(u32) 7=utt_id (one per row).
std::string EncodeBatch(const pipeline::Batch& batch);
pipeline::Batch DecodeBatch(std::string_view payload);

struct Endpoint {
  std::string host = "127.0.0.1";
  uint16_t port = 0;

  std::string ToString() const;
  bool operator==(const Endpoint&) const = default;
};

// "host:port"; port 0 asks the OS for a free one.
Endpoint ParseEndpoint(std::string_view text);

// Connected stream socket; closes on destruction.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.Release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { Close(); }

  static Socket Connect(const Endpoint& ep, double timeout_s = 10.0);

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int Release();
  void Close();
  // Half-closes both directions so a thread blocked in Recv wakes up.
  void Shutdown();

  void SendAll(std::string_view data);
  // False on orderly EOF before the first byte; throws kNetwork on EOF
  // part-way.
  bool RecvAll(char* buf, size_t n);

 private:
  int fd_ = -1;
};

void WriteFrame(Socket& sock, MsgType type, std::string_view payload);
// nullopt on orderly EOF at a frame boundary.
std::optional<Frame> ReadFrame(Socket& sock);

struct ServerStats {
  uint64_t batches_sent = 0;
  uint64_t buffered = 0;
  uint64_t epoch = 0;
};

std::string EncodeStats(const ServerStats& stats);
ServerStats DecodeStats(std::string_view payload);

struct ServerConfig {
  Endpoint bind;
  size_t num_pipelines = 1;
  // This server's place among `num_servers`; it owns shard i when
  // i mod num_servers == server_index.
  size_t server_index = 0;
  size_t num_servers = 1;
  // Template; shard_paths lists the whole corpus.
  pipeline::PipelineConfig pipeline;
  pipeline::AugmentConfig augment;
  dsp::FrontendConfig frontend;
  uint64_t seed_base = 0;
  uint64_t epochs = 1;
  uint32_t max_credits = kDefaultMaxCredits;
  // Concurrent batch producers across all connections; 0 means unlimited.
  size_t cpu_slots = 0;
  // Extra production time per utterance, spent while holding a CPU slot.
  double production_cost_s = 0.0;
  // Stop accepting once every pipeline slot has delivered all epochs.
  bool exit_when_done = true;

  void Validate() const;
};

// Shards of `all` served by pipeline `slot` of server `server_index`: the
// server's owned shards at positions k with k mod num_pipelines == slot.
std::vector<std::string> AssignedShards(const std::vector<std::string>& all,
                                        size_t server_index, size_t num_servers,
                                        size_t slot, size_t num_pipelines);

uint64_t PipelineSeed(const ServerConfig& cfg, size_t slot);

class ExampleServer {
 public:
  explicit ExampleServer(ServerConfig cfg);
  ~ExampleServer();
  ExampleServer(const ExampleServer&) = delete;
  ExampleServer& operator=(const ExampleServer&) = delete;

  // Binds and starts accepting; returns the bound endpoint.
  Endpoint Start();
  // Blocks until the server has finished (see exit_when_done) or Stop().
  void Wait();
  void Stop();

  const Endpoint& endpoint() const { return endpoint_; }

 private:
  struct Connection;

  void AcceptLoop();
  void HandleConnection(std::shared_ptr<Connection> conn);
  void Produce(std::shared_ptr<Connection> conn);
  void SendLoop(std::shared_ptr<Connection> conn);
  void AcquireCpu();
  void ReleaseCpu();
  void ReleaseSlot(size_t slot, bool completed);

  ServerConfig cfg_;
  Endpoint endpoint_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<bool> slot_busy_;
  std::vector<bool> slot_done_;
  std::vector<std::thread> workers_;
  std::vector<std::weak_ptr<Connection>> connections_;
  size_t cpu_in_use_ = 0;
  bool finished_ = false;
};

struct HelloReply {
  uint32_t version = kWireVersion;
  size_t pipeline = 0;
  size_t num_pipelines = 1;
  size_t server_index = 0;
  size_t num_servers = 1;
  uint32_t max_credits = kDefaultMaxCredits;
  uint64_t epochs = 1;
};

// One connection to an example server.  A background thread reads frames;
// Next() hands out batches in arrival order and, with auto_credit, returns
// one credit per batch taken.
class ConsumerClient : public pipeline::Source<pipeline::Batch> {
 public:
  struct Options {
    int pipeline = -1;  // -1 lets the server choose
    uint32_t max_credits = kDefaultMaxCredits;
    // Credits granted right after HELLO; defaults to max_credits.
    std::optional<uint32_t> initial_credits;
    bool auto_credit = true;
    double connect_timeout_s = 10.0;
    uint32_t protocol_version = kWireVersion;
    // Run the reader thread in the idle scheduling class so that, on a
    // saturated core, it never preempts the thread calling Next().
    bool idle_reader = false;
  };

  ConsumerClient(const Endpoint& ep, Options options);
  explicit ConsumerClient(const Endpoint& ep) : ConsumerClient(ep, Options{}) {}
  ~ConsumerClient() override;

  // nullopt after the final END.  Throws kDelivery when the connection drops
  // before that, or the error that broke the stream (kCorruption, kProtocol).
  std::optional<pipeline::Batch> Next() override;

  void Grant(uint32_t credits);
  ServerStats RequestStats(double timeout_s = 10.0);

  const HelloReply& hello() const { return hello_; }
  const Endpoint& endpoint() const { return endpoint_; }
  uint64_t epochs_completed() const;
  // Sequence number of the last batch received, if any.
  std::optional<uint64_t> last_sequence() const;
  void Close();

 private:
  struct Item {
    std::optional<pipeline::Batch> batch;
    uint64_t end_epoch = 0;
    bool final = false;
  };

  void ReadLoop();
  void Fault(std::exception_ptr error);

  Endpoint endpoint_;
  Options options_;
  Socket sock_;
  std::mutex write_mu_;
  HelloReply hello_;
  std::thread reader_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> items_;
  std::exception_ptr error_;
  bool final_received_ = false;  // reader saw the final END
  bool done_ = false;            // Next() handed out the final END
  bool eof_ = false;
  uint64_t epochs_completed_ = 0;
  std::optional<uint64_t> last_sequence_;
  uint64_t stats_generation_ = 0;
  ServerStats last_stats_;
};

// Merges several connections into one stream in arrival order.  With
// `idle_forwarders` the per-connection threads run in the idle scheduling
// class, like ConsumerClient::Options::idle_reader.
class MergedBatchSource : public pipeline::Source<pipeline::Batch> {
 public:
  explicit MergedBatchSource(std::vector<std::unique_ptr<ConsumerClient>> clients,
                             bool idle_forwarders = false);
  ~MergedBatchSource() override;

  std::optional<pipeline::Batch> Next() override;

 private:
  void Forward(size_t index);

  std::vector<std::unique_ptr<ConsumerClient>> clients_;
  bool idle_forwarders_ = false;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<pipeline::Batch> queue_;
  size_t active_ = 0;
  bool closing_ = false;
  std::exception_ptr error_;
};

// A child `esf serve` process; killed on destruction if still running.
class ServerProcess {
 public:
  ServerProcess(pid_t pid, Endpoint endpoint, int stdout_fd);
  ServerProcess(ServerProcess&& other) noexcept;
  ServerProcess& operator=(ServerProcess&& other) noexcept;
  ~ServerProcess();

  const Endpoint& endpoint() const { return endpoint_; }
  pid_t pid() const { return pid_; }
  void Kill();
  // Exit status, or -1 when it did not exit within the timeout.
  int Wait(double timeout_s);

 private:
  pid_t pid_ = -1;
  Endpoint endpoint_;
  int stdout_fd_ = -1;
};

// Spawns n servers on 127.0.0.1 with ephemeral ports.  Server j gets
// server_index j of n; the configuration is written to `work_dir`.
std::vector<ServerProcess> LaunchServers(size_t n, const ServerConfig& tmpl,
                                         const std::string& esf_binary,
                                         const std::string& work_dir,
                                         double startup_timeout_s = 30.0);

}  // namespace esf::exserver

#endif  // ESF_EXSERVER_H_
