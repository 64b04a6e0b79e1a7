// src/exserver.cc

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

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>

#include "json.hpp"

#include "esf/bytes.h"
#include "esf/config.h"

extern char** environ;

namespace esf::exserver {

using json = nlohmann::json;
using pipeline::Batch;

namespace {

std::string SysError(const std::string& what) {
  return what + ": " + std::strerror(errno);
}

// Best effort; a thread that stays in the normal class still works.
void EnterIdleScheduling() {
  sched_param param{};
  ::sched_setscheduler(0, SCHED_IDLE, &param);
}

json ParseJsonPayload(std::string_view payload, const char* what) {
  try {
    return json::parse(payload);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kProtocol, std::string("malformed ") + what + " payload: " + e.what());
  }
}

template <typename T>
T JsonField(const json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    Fail(ErrorKind::kProtocol, std::string(what) + " payload lacks a valid '" + key + "'");
  }
}

void ExpectSize(std::string_view value, size_t n, const char* field) {
  if (value.size() != n) {
    Fail(ErrorKind::kFormat, std::string("batch field '") + field + "' has " +
                                 std::to_string(value.size()) + " bytes, expected " +
                                 std::to_string(n));
  }
}

template <typename T>
void PutArray(std::string* out, uint8_t tag, const std::vector<T>& v) {
  static_assert(sizeof(T) == 4);
  std::string bytes;
  bytes.reserve(v.size() * 4);
  for (const T& x : v) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    PutU32(&bytes, bits);
  }
  PutTlv(out, tag, bytes);
}

template <typename T>
std::vector<T> GetArray(std::string_view value, size_t count, const char* field) {
  ExpectSize(value, count * 4, field);
  std::vector<T> v(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t bits = DecodeU32(value.data() + 4 * i);
    std::memcpy(&v[i], &bits, 4);
  }
  return v;
}

void SetLinger0(int fd) {
  linger lg{1, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_LINGER, &lg, sizeof(lg));
}

}  // namespace

const char* MsgTypeName(MsgType type) {
  switch (type) {
    case MsgType::kHello: return "HELLO";
    case MsgType::kCredit: return "CREDIT";
    case MsgType::kBatch: return "BATCH";
    case MsgType::kStats: return "STATS";
    case MsgType::kEnd: return "END";
    case MsgType::kError: return "ERROR";
  }
  return "UNKNOWN";
}

std::string EncodeFrame(MsgType type, std::string_view payload) {
  if (payload.size() > kMaxPayload) {
    Fail(ErrorKind::kSize, "frame payload of " + std::to_string(payload.size()) +
                               " bytes exceeds the 64 MiB limit");
  }
  std::string out;
  out.reserve(kFrameHeaderSize + payload.size() + 4);
  out.append(kWireMagic, 4);
  PutU8(&out, kWireVersion);
  PutU8(&out, static_cast<uint8_t>(type));
  PutU32(&out, static_cast<uint32_t>(payload.size()));
  out.append(payload);
  PutU32(&out, Crc32c(payload));
  return out;
}

namespace {

// Validates a frame header and returns the message type and payload length.
std::pair<MsgType, uint32_t> ParseHeader(const char* h) {
  if (std::memcmp(h, kWireMagic, 4) != 0) Fail(ErrorKind::kProtocol, "bad frame magic");
  const uint8_t version = static_cast<uint8_t>(h[4]);
  if (version != kWireVersion) {
    Fail(ErrorKind::kProtocol, "unsupported protocol version " + std::to_string(version));
  }
  const uint8_t type = static_cast<uint8_t>(h[5]);
  if (type < 1 || type > 6) Fail(ErrorKind::kProtocol, "unknown message type " + std::to_string(type));
  const uint32_t length = DecodeU32(h + 6);
  if (length > kMaxPayload) {
    Fail(ErrorKind::kProtocol, "payload length " + std::to_string(length) + " exceeds limit");
  }
  return {static_cast<MsgType>(type), length};
}

void CheckCrc(MsgType type, std::string_view payload, uint32_t stored) {
  if (Crc32c(payload) != stored) {
    Fail(ErrorKind::kCorruption,
         std::string("CRC mismatch in ") + MsgTypeName(type) + " frame payload");
  }
}

}  // namespace

std::optional<Frame> DecodeFrame(std::string_view data, size_t* consumed) {
  if (data.size() < kFrameHeaderSize) return std::nullopt;
  auto [type, length] = ParseHeader(data.data());
  const size_t total = kFrameHeaderSize + length + 4;
  if (data.size() < total) return std::nullopt;
  Frame f;
  f.type = type;
  f.payload.assign(data.substr(kFrameHeaderSize, length));
  CheckCrc(type, f.payload, DecodeU32(data.data() + kFrameHeaderSize + length));
  *consumed = total;
  return f;
}

std::string EncodeBatch(const Batch& b) {
  const size_t B = b.batch_size;
  if (b.features.size() != B * b.max_frames * b.feature_dim ||
      b.labels.size() != B * b.max_labels || b.feature_lengths.size() != B ||
      b.label_lengths.size() != B || b.utt_ids.size() != B) {
    Fail(ErrorKind::kArgument, "batch arrays do not match its shape");
  }
  std::string out;
  std::string field;
  PutU64(&field, b.sequence);
  PutTlv(&out, 1, field);
  field.clear();
  PutU32(&field, b.batch_size);
  PutU32(&field, b.max_frames);
  PutU32(&field, b.feature_dim);
  PutU32(&field, b.max_labels);
  PutTlv(&out, 2, field);
  PutArray(&out, 3, b.features);
  PutArray(&out, 4, b.feature_lengths);
  PutArray(&out, 5, b.labels);
  PutArray(&out, 6, b.label_lengths);
  for (const auto& id : b.utt_ids) PutTlv(&out, 7, id);
  return out;
}

Batch DecodeBatch(std::string_view payload) {
  Batch b;
  bool have_shape = false, have_sequence = false;
  std::string_view features, feature_lengths, labels, label_lengths;
  TlvReader reader(payload);
  uint8_t tag;
  std::string_view value;
  try {
    while (reader.Next(&tag, &value)) {
      switch (tag) {
        case 1:
          ExpectSize(value, 8, "sequence");
          b.sequence = DecodeU64(value.data());
          have_sequence = true;
          break;
        case 2:
          ExpectSize(value, 16, "shape");
          b.batch_size = DecodeU32(value.data());
          b.max_frames = DecodeU32(value.data() + 4);
          b.feature_dim = DecodeU32(value.data() + 8);
          b.max_labels = DecodeU32(value.data() + 12);
          have_shape = true;
          break;
        case 3: features = value; break;
        case 4: feature_lengths = value; break;
        case 5: labels = value; break;
        case 6: label_lengths = value; break;
        case 7: b.utt_ids.emplace_back(value); break;
        default: break;
      }
    }
  } catch (const Error& e) {
    Fail(ErrorKind::kFormat, std::string("malformed batch payload: ") + e.what());
  }
  if (!have_shape || !have_sequence) Fail(ErrorKind::kFormat, "batch payload lacks shape or sequence");
  const size_t B = b.batch_size;
  const uint64_t cells = static_cast<uint64_t>(B) * b.max_frames * b.feature_dim;
  if (cells * 4 > payload.size() || static_cast<uint64_t>(B) * b.max_labels * 4 > payload.size()) {
    Fail(ErrorKind::kFormat, "batch shape exceeds payload size");
  }
  b.features = GetArray<float>(features, cells, "features");
  b.feature_lengths = GetArray<uint32_t>(feature_lengths, B, "feature_lengths");
  b.labels = GetArray<int32_t>(labels, B * b.max_labels, "labels");
  b.label_lengths = GetArray<uint32_t>(label_lengths, B, "label_lengths");
  if (b.utt_ids.size() != B) Fail(ErrorKind::kFormat, "batch utt_id count does not match its size");
  return b;
}

std::string Endpoint::ToString() const { return host + ":" + std::to_string(port); }

Endpoint ParseEndpoint(std::string_view text) {
  const size_t colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    Fail(ErrorKind::kArgument, "endpoint must look like host:port, got '" + std::string(text) + "'");
  }
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  const std::string port(text.substr(colon + 1));
  char* end = nullptr;
  const long value = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || value < 0 || value > 65535) {
    Fail(ErrorKind::kArgument, "invalid port in '" + std::string(text) + "'");
  }
  ep.port = static_cast<uint16_t>(value);
  return ep;
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    Close();
    fd_ = other.Release();
  }
  return *this;
}

int Socket::Release() {
  const int fd = fd_;
  fd_ = -1;
  return fd;
}

void Socket::Close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::Shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket Socket::Connect(const Endpoint& ep, double timeout_s) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    Fail(ErrorKind::kNetwork, "cannot resolve " + ep.ToString() + ": " + ::gai_strerror(rc));
  }
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_s);
  std::string last_error = "no addresses";
  while (true) {
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
      if (!s.valid()) continue;
      if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
        int one = 1;
        ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        ::freeaddrinfo(res);
        return s;
      }
      last_error = std::strerror(errno);
    }
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  ::freeaddrinfo(res);
  Fail(ErrorKind::kNetwork, "cannot connect to " + ep.ToString() + ": " + last_error);
}

void Socket::SendAll(std::string_view data) {
  size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      Fail(ErrorKind::kNetwork, SysError("send failed"));
    }
    sent += static_cast<size_t>(n);
  }
}

bool Socket::RecvAll(char* buf, size_t n) {
  size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd_, buf + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      Fail(ErrorKind::kNetwork, SysError("recv failed"));
    }
    if (r == 0) {
      if (got == 0) return false;
      Fail(ErrorKind::kNetwork, "connection closed inside a frame");
    }
    got += static_cast<size_t>(r);
  }
  return true;
}

void WriteFrame(Socket& sock, MsgType type, std::string_view payload) {
  sock.SendAll(EncodeFrame(type, payload));
}

std::optional<Frame> ReadFrame(Socket& sock) {
  char header[kFrameHeaderSize];
  if (!sock.RecvAll(header, sizeof(header))) return std::nullopt;
  auto [type, length] = ParseHeader(header);
  Frame f;
  f.type = type;
  f.payload.resize(length);
  char crc[4];
  if ((length > 0 && !sock.RecvAll(f.payload.data(), length)) || !sock.RecvAll(crc, 4)) {
    Fail(ErrorKind::kNetwork, "connection closed inside a frame");
  }
  CheckCrc(type, f.payload, DecodeU32(crc));
  return f;
}

std::string EncodeStats(const ServerStats& s) {
  return json{{"batches_sent", s.batches_sent}, {"buffered", s.buffered}, {"epoch", s.epoch}}.dump();
}

ServerStats DecodeStats(std::string_view payload) {
  const json j = ParseJsonPayload(payload, "STATS");
  ServerStats s;
  s.batches_sent = JsonField<uint64_t>(j, "batches_sent", "STATS");
  s.buffered = JsonField<uint64_t>(j, "buffered", "STATS");
  s.epoch = JsonField<uint64_t>(j, "epoch", "STATS");
  return s;
}

void ServerConfig::Validate() const {
  if (num_pipelines < 1) Fail(ErrorKind::kConfig, "num_pipelines must be >= 1");
  if (num_servers < 1 || server_index >= num_servers) {
    Fail(ErrorKind::kConfig, "server_index must lie in [0, num_servers)");
  }
  if (epochs < 1) Fail(ErrorKind::kConfig, "epochs must be >= 1");
  if (max_credits < 1) Fail(ErrorKind::kConfig, "max_credits must be >= 1");
  if (!(production_cost_s >= 0.0)) Fail(ErrorKind::kConfig, "production_cost_s must be >= 0");
  pipeline.Validate();
}

std::vector<std::string> AssignedShards(const std::vector<std::string>& all,
                                        size_t server_index, size_t num_servers,
                                        size_t slot, size_t num_pipelines) {
  if (num_servers < 1 || num_pipelines < 1) Fail(ErrorKind::kArgument, "counts must be >= 1");
  std::vector<std::string> out;
  size_t position = 0;
  for (size_t i = 0; i < all.size(); ++i) {
    if (i % num_servers != server_index) continue;
    if (position++ % num_pipelines == slot) out.push_back(all[i]);
  }
  return out;
}

uint64_t PipelineSeed(const ServerConfig& cfg, size_t slot) {
  return Hash64(Hash64(cfg.pipeline.seed, cfg.seed_base), cfg.server_index, slot);
}

// ---------------------------------------------------------------------------
// Server

struct ExampleServer::Connection {
  struct Item {
    enum Kind { kBatch, kEnd, kError } kind = kBatch;
    std::string payload;
    bool final = false;
  };

  Socket sock;
  std::string peer;
  std::mutex write_mu;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<Item> queue;
  uint64_t buffered = 0;
  uint32_t credits = 0;
  uint32_t max_credits = kDefaultMaxCredits;
  uint64_t batches_sent = 0;
  uint64_t epoch = 0;
  bool closed = false;
  bool completed = false;
  size_t slot = 0;

  void Send(MsgType type, std::string_view payload) {
    std::lock_guard<std::mutex> lock(write_mu);
    WriteFrame(sock, type, payload);
  }

  void Close() {
    {
      std::lock_guard<std::mutex> lock(mu);
      closed = true;
    }
    cv.notify_all();
    sock.Shutdown();
  }
};

ExampleServer::ExampleServer(ServerConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.Validate();
  slot_busy_.assign(cfg_.num_pipelines, false);
  slot_done_.assign(cfg_.num_pipelines, false);
}

ExampleServer::~ExampleServer() {
  Stop();
  Wait();
}

Endpoint ExampleServer::Start() {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(cfg_.bind.port);
  if (int rc = ::getaddrinfo(cfg_.bind.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    Fail(ErrorKind::kNetwork, "cannot resolve " + cfg_.bind.ToString() + ": " + ::gai_strerror(rc));
  }
  int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    Fail(ErrorKind::kNetwork, SysError("socket"));
  }
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
    const std::string msg = SysError("cannot listen on " + cfg_.bind.ToString());
    ::close(fd);
    ::freeaddrinfo(res);
    Fail(ErrorKind::kNetwork, msg);
  }
  ::freeaddrinfo(res);
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  endpoint_.host = cfg_.bind.host;
  endpoint_.port = ntohs(addr.ss_family == AF_INET6
                             ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                             : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  listen_fd_ = fd;
  accept_thread_ = std::thread(&ExampleServer::AcceptLoop, this);
  return endpoint_;
}

void ExampleServer::AcceptLoop() {
  while (!stopping_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, 100);
    if (rc <= 0) continue;
    sockaddr_storage addr{};
    socklen_t len = sizeof(addr);
    const int fd = ::accept4(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len, SOCK_CLOEXEC);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto conn = std::make_shared<Connection>();
    conn->sock = Socket(fd);
    char host[INET6_ADDRSTRLEN] = "?";
    if (addr.ss_family == AF_INET) {
      ::inet_ntop(AF_INET, &reinterpret_cast<sockaddr_in*>(&addr)->sin_addr, host, sizeof(host));
      conn->peer = std::string(host) + ":" +
                   std::to_string(ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port));
    }
    std::lock_guard<std::mutex> lock(mu_);
    connections_.push_back(conn);
    workers_.emplace_back(&ExampleServer::HandleConnection, this, conn);
  }
  ::close(listen_fd_);
  listen_fd_ = -1;
}

void ExampleServer::Stop() {
  stopping_ = true;
  std::vector<std::shared_ptr<Connection>> live;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& weak : connections_) {
      if (auto c = weak.lock()) live.push_back(std::move(c));
    }
  }
  for (auto& c : live) c->Close();
  cv_.notify_all();
}

void ExampleServer::Wait() {
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void ExampleServer::AcquireCpu() {
  if (cfg_.cpu_slots == 0) return;
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return cpu_in_use_ < cfg_.cpu_slots; });
  ++cpu_in_use_;
}

void ExampleServer::ReleaseCpu() {
  if (cfg_.cpu_slots == 0) return;
  {
    std::lock_guard<std::mutex> lock(mu_);
    --cpu_in_use_;
  }
  cv_.notify_all();
}

void ExampleServer::ReleaseSlot(size_t slot, bool completed) {
  std::lock_guard<std::mutex> lock(mu_);
  slot_busy_[slot] = false;
  if (completed) slot_done_[slot] = true;
  if (cfg_.exit_when_done &&
      std::all_of(slot_done_.begin(), slot_done_.end(), [](bool d) { return d; })) {
    finished_ = true;
    stopping_ = true;
  }
}

void ExampleServer::HandleConnection(std::shared_ptr<Connection> conn) {
  auto reject = [&](const std::string& message) {
    std::cerr << "esf serve: rejecting " << conn->peer << ": " << message << "\n";
    try {
      conn->Send(MsgType::kError, message);
    } catch (const Error&) {
    }
    conn->sock.Shutdown();
  };

  // Handshake.
  size_t slot = 0;
  bool have_slot = false;
  try {
    std::optional<Frame> hello = ReadFrame(conn->sock);
    if (!hello) return;
    if (hello->type != MsgType::kHello) {
      reject(std::string("expected HELLO, got ") + MsgTypeName(hello->type));
      return;
    }
    const json j = ParseJsonPayload(hello->payload, "HELLO");
    const auto version = JsonField<uint32_t>(j, "version", "HELLO");
    if (version != kWireVersion) {
      reject("unsupported protocol version " + std::to_string(version));
      return;
    }
    const auto requested = j.contains("pipeline") ? JsonField<int64_t>(j, "pipeline", "HELLO") : -1;
    const auto credits = j.contains("max_credits") ? JsonField<uint32_t>(j, "max_credits", "HELLO")
                                                   : cfg_.max_credits;
    if (credits < 1) {
      reject("max_credits must be >= 1");
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto usable = [&](size_t s) {
        return !slot_busy_[s] && !(cfg_.exit_when_done && slot_done_[s]);
      };
      std::optional<size_t> chosen;
      if (requested >= 0) {
        if (static_cast<size_t>(requested) < cfg_.num_pipelines && usable(requested)) {
          chosen = static_cast<size_t>(requested);
        }
      } else {
        for (size_t s = 0; s < cfg_.num_pipelines && !chosen; ++s) {
          if (usable(s)) chosen = s;
        }
      }
      if (!chosen) {
        // Fall through to reject outside the lock.
        slot = cfg_.num_pipelines;
      } else {
        slot = *chosen;
        slot_busy_[slot] = true;
        have_slot = true;
      }
    }
    if (slot == cfg_.num_pipelines) {
      reject(requested >= 0 ? "pipeline " + std::to_string(requested) + " is not available"
                            : std::string("no free pipeline"));
      return;
    }
    conn->slot = slot;
    conn->max_credits = credits;
    const json reply = {{"version", kWireVersion},
                        {"pipeline", slot},
                        {"num_pipelines", cfg_.num_pipelines},
                        {"server_index", cfg_.server_index},
                        {"num_servers", cfg_.num_servers},
                        {"max_credits", credits},
                        {"epochs", cfg_.epochs}};
    conn->Send(MsgType::kHello, reply.dump());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kProtocol) {
      reject(e.what());
    } else {
      std::cerr << "esf serve: handshake with " << conn->peer << " failed: " << e.what() << "\n";
      SetLinger0(conn->sock.fd());
    }
    if (have_slot) ReleaseSlot(slot, false);
    return;
  }

  std::thread producer(&ExampleServer::Produce, this, conn);
  std::thread sender(&ExampleServer::SendLoop, this, conn);

  // Control frames from the consumer.
  try {
    while (true) {
      std::optional<Frame> f = ReadFrame(conn->sock);
      if (!f) break;
      if (f->type == MsgType::kCredit) {
        if (f->payload.size() != 4) Fail(ErrorKind::kProtocol, "CREDIT payload must be 4 bytes");
        const uint32_t n = DecodeU32(f->payload.data());
        std::lock_guard<std::mutex> lock(conn->mu);
        if (static_cast<uint64_t>(conn->credits) + n > conn->max_credits) {
          Fail(ErrorKind::kProtocol, "credit grant exceeds max_credits");
        }
        conn->credits += n;
        conn->cv.notify_all();
      } else if (f->type == MsgType::kStats) {
        ServerStats s;
        {
          std::lock_guard<std::mutex> lock(conn->mu);
          s.batches_sent = conn->batches_sent;
          s.buffered = conn->buffered;
          s.epoch = conn->epoch;
        }
        conn->Send(MsgType::kStats, EncodeStats(s));
      } else {
        Fail(ErrorKind::kProtocol, std::string("unexpected ") + MsgTypeName(f->type) + " from consumer");
      }
    }
  } catch (const Error& e) {
    std::cerr << "esf serve: connection " << conn->peer << " reset: " << e.what() << "\n";
    if (e.kind() == ErrorKind::kProtocol) {
      try {
        conn->Send(MsgType::kError, e.what());
      } catch (const Error&) {
      }
    }
    SetLinger0(conn->sock.fd());
  }
  conn->Close();
  producer.join();
  sender.join();
  bool completed;
  {
    std::lock_guard<std::mutex> lock(conn->mu);
    completed = conn->completed;
  }
  ReleaseSlot(slot, completed);
  conn->sock.Close();
}

void ExampleServer::Produce(std::shared_ptr<Connection> conn) {
  using Item = Connection::Item;
  auto push = [&](Item item) {
    std::lock_guard<std::mutex> lock(conn->mu);
    if (item.kind == Item::kBatch) ++conn->buffered;
    conn->queue.push_back(std::move(item));
    conn->cv.notify_all();
  };
  try {
    const std::vector<std::string> shards =
        AssignedShards(cfg_.pipeline.shard_paths, cfg_.server_index, cfg_.num_servers,
                       conn->slot, cfg_.num_pipelines);
    uint64_t sequence = 0;
    for (uint64_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      {
        std::lock_guard<std::mutex> lock(conn->mu);
        if (conn->closed) return;
        conn->epoch = epoch;
      }
      if (!shards.empty()) {
        pipeline::PipelineConfig pc = cfg_.pipeline;
        pc.shard_paths = shards;
        pc.seed = PipelineSeed(cfg_, conn->slot);
        pc.epoch = epoch;
        pipeline::Pipeline p = pipeline::BuildPipeline(pc, cfg_.augment, cfg_.frontend);
        while (true) {
          {
            std::unique_lock<std::mutex> lock(conn->mu);
            conn->cv.wait(lock, [&] { return conn->closed || conn->buffered < conn->max_credits; });
            if (conn->closed) return;
          }
          std::optional<Batch> batch;
          AcquireCpu();
          try {
            batch = p.batches->Next();
            if (batch && cfg_.production_cost_s > 0.0) {
              std::this_thread::sleep_for(std::chrono::duration<double>(
                  cfg_.production_cost_s * batch->batch_size));
            }
          } catch (...) {
            ReleaseCpu();
            throw;
          }
          ReleaseCpu();
          if (!batch) break;
          batch->sequence = sequence++;
          push(Item{Item::kBatch, EncodeBatch(*batch), false});
        }
      }
      const bool final = epoch + 1 == cfg_.epochs;
      push(Item{Item::kEnd, json{{"epoch", epoch}, {"final", final}}.dump(), final});
    }
  } catch (const std::exception& e) {
    std::cerr << "esf serve: pipeline " << conn->slot << " failed: " << e.what() << "\n";
    push(Item{Item::kError, std::string("pipeline failed: ") + e.what(), false});
  }
}

void ExampleServer::SendLoop(std::shared_ptr<Connection> conn) {
  using Item = Connection::Item;
  try {
    while (true) {
      Item item;
      {
        std::unique_lock<std::mutex> lock(conn->mu);
        conn->cv.wait(lock, [&] {
          return conn->closed ||
                 (!conn->queue.empty() &&
                  (conn->queue.front().kind != Item::kBatch || conn->credits > 0));
        });
        if (conn->closed) return;
        item = std::move(conn->queue.front());
        conn->queue.pop_front();
        if (item.kind == Item::kBatch) {
          --conn->credits;
          --conn->buffered;
        }
      }
      conn->cv.notify_all();
      switch (item.kind) {
        case Item::kBatch: {
          conn->Send(MsgType::kBatch, item.payload);
          std::lock_guard<std::mutex> lock(conn->mu);
          ++conn->batches_sent;
          break;
        }
        case Item::kEnd:
          conn->Send(MsgType::kEnd, item.payload);
          if (item.final) {
            {
              std::lock_guard<std::mutex> lock(conn->mu);
              conn->completed = true;
            }
            {
              std::lock_guard<std::mutex> lock(mu_);
              slot_done_[conn->slot] = true;
            }
            // No more data; the reader keeps serving STATS until the consumer
            // closes.
            return;
          }
          break;
        case Item::kError:
          conn->Send(MsgType::kError, item.payload);
          conn->Close();
          return;
      }
    }
  } catch (const Error& e) {
    std::cerr << "esf serve: send to " << conn->peer << " failed: " << e.what() << "\n";
    conn->Close();
  }
}

// ---------------------------------------------------------------------------
// Consumer

ConsumerClient::ConsumerClient(const Endpoint& ep, Options options)
    : endpoint_(ep), options_(options) {
  if (options_.max_credits < 1) Fail(ErrorKind::kArgument, "max_credits must be >= 1");
  sock_ = Socket::Connect(ep, options_.connect_timeout_s);
  const json hello = {{"version", options_.protocol_version},
                      {"pipeline", options_.pipeline},
                      {"max_credits", options_.max_credits}};
  WriteFrame(sock_, MsgType::kHello, hello.dump());
  std::optional<Frame> reply;
  try {
    reply = ReadFrame(sock_);
  } catch (const Error& e) {
    Fail(e.kind(), "handshake with " + ep.ToString() + " failed: " + e.message());
  }
  if (!reply) Fail(ErrorKind::kNetwork, "server " + ep.ToString() + " closed during handshake");
  if (reply->type == MsgType::kError) {
    Fail(ErrorKind::kProtocol, "server " + ep.ToString() + " refused: " + reply->payload);
  }
  if (reply->type != MsgType::kHello) {
    Fail(ErrorKind::kProtocol, std::string("expected HELLO reply, got ") + MsgTypeName(reply->type));
  }
  const json j = ParseJsonPayload(reply->payload, "HELLO");
  hello_.version = JsonField<uint32_t>(j, "version", "HELLO");
  hello_.pipeline = JsonField<size_t>(j, "pipeline", "HELLO");
  hello_.num_pipelines = JsonField<size_t>(j, "num_pipelines", "HELLO");
  hello_.server_index = JsonField<size_t>(j, "server_index", "HELLO");
  hello_.num_servers = JsonField<size_t>(j, "num_servers", "HELLO");
  hello_.max_credits = JsonField<uint32_t>(j, "max_credits", "HELLO");
  hello_.epochs = JsonField<uint64_t>(j, "epochs", "HELLO");
  reader_ = std::thread(&ConsumerClient::ReadLoop, this);
  const uint32_t initial = options_.initial_credits.value_or(options_.max_credits);
  if (initial > 0) Grant(initial);
}

ConsumerClient::~ConsumerClient() { Close(); }

void ConsumerClient::Close() {
  sock_.Shutdown();
  if (reader_.joinable()) reader_.join();
}

void ConsumerClient::Fault(std::exception_ptr error) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!error_) error_ = error;
  eof_ = true;
  cv_.notify_all();
}

void ConsumerClient::ReadLoop() {
  if (options_.idle_reader) EnterIdleScheduling();
  try {
    while (true) {
      std::optional<Frame> f = ReadFrame(sock_);
      if (!f) break;
      switch (f->type) {
        case MsgType::kBatch: {
          Batch b = DecodeBatch(f->payload);
          std::lock_guard<std::mutex> lock(mu_);
          if (last_sequence_ && b.sequence <= *last_sequence_) {
            Fail(ErrorKind::kProtocol, "batch sequence " + std::to_string(b.sequence) +
                                           " arrived out of order");
          }
          last_sequence_ = b.sequence;
          items_.push_back(Item{std::move(b), 0, false});
          cv_.notify_all();
          break;
        }
        case MsgType::kEnd: {
          const json j = ParseJsonPayload(f->payload, "END");
          Item item;
          item.end_epoch = JsonField<uint64_t>(j, "epoch", "END");
          item.final = JsonField<bool>(j, "final", "END");
          std::lock_guard<std::mutex> lock(mu_);
          if (item.final) final_received_ = true;
          items_.push_back(std::move(item));
          cv_.notify_all();
          break;
        }
        case MsgType::kStats: {
          ServerStats s = DecodeStats(f->payload);
          std::lock_guard<std::mutex> lock(mu_);
          last_stats_ = s;
          ++stats_generation_;
          cv_.notify_all();
          break;
        }
        case MsgType::kError:
          Fail(ErrorKind::kProtocol, "server " + endpoint_.ToString() + " error: " + f->payload);
        default:
          Fail(ErrorKind::kProtocol, std::string("unexpected ") + MsgTypeName(f->type) + " from server");
      }
    }
  } catch (const Error& e) {
    bool ended;
    std::optional<uint64_t> last;
    {
      std::lock_guard<std::mutex> lock(mu_);
      ended = final_received_;
      last = last_sequence_;
    }
    if (ended && e.kind() == ErrorKind::kNetwork) {
      // Closed locally after the epoch finished.
    } else if (e.kind() == ErrorKind::kNetwork) {
      Fault(std::make_exception_ptr(Error(
          ErrorKind::kDelivery,
          "connection to " + endpoint_.ToString() + " lost (" + e.what() + ") " +
              (last ? "after batch " + std::to_string(*last) : "before the first batch"))));
      return;
    } else {
      Fault(std::current_exception());
      sock_.Shutdown();
      return;
    }
  }
  std::lock_guard<std::mutex> lock(mu_);
  if (!final_received_ && !error_) {
    error_ = std::make_exception_ptr(Error(
        ErrorKind::kDelivery,
        "connection to " + endpoint_.ToString() + " closed mid-epoch " +
            (last_sequence_ ? "after batch " + std::to_string(*last_sequence_)
                            : "before the first batch")));
  }
  eof_ = true;
  cv_.notify_all();
}

std::optional<Batch> ConsumerClient::Next() {
  std::unique_lock<std::mutex> lock(mu_);
  while (true) {
    if (done_) return std::nullopt;
    cv_.wait(lock, [&] { return !items_.empty() || error_ || eof_; });
    if (!items_.empty()) {
      Item item = std::move(items_.front());
      items_.pop_front();
      if (item.batch) {
        lock.unlock();
        if (options_.auto_credit) {
          try {
            Grant(1);
          } catch (const Error&) {
            // The reader reports the broken connection.
          }
        }
        return std::move(item.batch);
      }
      ++epochs_completed_;
      if (item.final) {
        done_ = true;
        return std::nullopt;
      }
      continue;
    }
    if (error_) std::rethrow_exception(error_);
    return std::nullopt;
  }
}

void ConsumerClient::Grant(uint32_t credits) {
  if (credits == 0) return;
  std::string payload;
  PutU32(&payload, credits);
  std::lock_guard<std::mutex> lock(write_mu_);
  WriteFrame(sock_, MsgType::kCredit, payload);
}

ServerStats ConsumerClient::RequestStats(double timeout_s) {
  uint64_t generation;
  {
    std::lock_guard<std::mutex> lock(mu_);
    generation = stats_generation_;
  }
  {
    std::lock_guard<std::mutex> lock(write_mu_);
    WriteFrame(sock_, MsgType::kStats, "");
  }
  std::unique_lock<std::mutex> lock(mu_);
  const bool ok = cv_.wait_for(lock, std::chrono::duration<double>(timeout_s), [&] {
    return stats_generation_ > generation || error_ || eof_;
  });
  if (stats_generation_ > generation) return last_stats_;
  if (error_) std::rethrow_exception(error_);
  Fail(ErrorKind::kNetwork, ok ? "connection closed before STATS reply" : "timed out waiting for STATS");
}

uint64_t ConsumerClient::epochs_completed() const {
  std::lock_guard<std::mutex> lock(mu_);
  return epochs_completed_;
}

std::optional<uint64_t> ConsumerClient::last_sequence() const {
  std::lock_guard<std::mutex> lock(mu_);
  return last_sequence_;
}

MergedBatchSource::MergedBatchSource(std::vector<std::unique_ptr<ConsumerClient>> clients,
                                     bool idle_forwarders)
    : clients_(std::move(clients)), idle_forwarders_(idle_forwarders), active_(clients_.size()) {
  for (size_t i = 0; i < clients_.size(); ++i) {
    threads_.emplace_back(&MergedBatchSource::Forward, this, i);
  }
}

MergedBatchSource::~MergedBatchSource() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    closing_ = true;
  }
  cv_.notify_all();
  for (auto& c : clients_) c->Close();
  for (auto& t : threads_) t.join();
}

void MergedBatchSource::Forward(size_t index) {
  if (idle_forwarders_) EnterIdleScheduling();
  try {
    while (true) {
      std::optional<Batch> b = clients_[index]->Next();
      if (!b) break;
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return closing_ || queue_.size() < clients_.size(); });
      if (closing_) break;
      queue_.push_back(std::move(*b));
      cv_.notify_all();
    }
  } catch (...) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!error_ && !closing_) error_ = std::current_exception();
  }
  std::lock_guard<std::mutex> lock(mu_);
  --active_;
  cv_.notify_all();
}

std::optional<Batch> MergedBatchSource::Next() {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return !queue_.empty() || error_ || active_ == 0; });
  if (!queue_.empty()) {
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }
  if (error_) std::rethrow_exception(error_);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Processes

ServerProcess::ServerProcess(pid_t pid, Endpoint endpoint, int stdout_fd)
    : pid_(pid), endpoint_(std::move(endpoint)), stdout_fd_(stdout_fd) {}

ServerProcess::ServerProcess(ServerProcess&& other) noexcept
    : pid_(other.pid_), endpoint_(std::move(other.endpoint_)), stdout_fd_(other.stdout_fd_) {
  other.pid_ = -1;
  other.stdout_fd_ = -1;
}

ServerProcess& ServerProcess::operator=(ServerProcess&& other) noexcept {
  if (this != &other) {
    Kill();
    if (stdout_fd_ >= 0) ::close(stdout_fd_);
    pid_ = other.pid_;
    endpoint_ = std::move(other.endpoint_);
    stdout_fd_ = other.stdout_fd_;
    other.pid_ = -1;
    other.stdout_fd_ = -1;
  }
  return *this;
}

ServerProcess::~ServerProcess() {
  Kill();
  if (stdout_fd_ >= 0) ::close(stdout_fd_);
}

void ServerProcess::Kill() {
  if (pid_ <= 0) return;
  ::kill(pid_, SIGTERM);
  if (Wait(2.0) == -1) {
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }
  pid_ = -1;
}

int ServerProcess::Wait(double timeout_s) {
  if (pid_ <= 0) return -1;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  while (true) {
    int status = 0;
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      pid_ = -1;
      if (WIFEXITED(status)) return WEXITSTATUS(status);
      return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
    }
    if (r < 0) {
      pid_ = -1;
      return -1;
    }
    if (std::chrono::steady_clock::now() >= deadline) return -1;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

namespace {

// Reads one line from `fd` within the deadline; nullopt on EOF or timeout.
std::optional<std::string> ReadLine(int fd, std::chrono::steady_clock::time_point deadline) {
  std::string line;
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd pfd{fd, POLLIN, 0};
    if (::poll(&pfd, 1, static_cast<int>(left.count())) <= 0) continue;
    char c;
    const ssize_t n = ::read(fd, &c, 1);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;
    if (c == '\n') return line;
    line += c;
  }
}

}  // namespace

std::vector<ServerProcess> LaunchServers(size_t n, const ServerConfig& tmpl,
                                         const std::string& esf_binary,
                                         const std::string& work_dir,
                                         double startup_timeout_s) {
  if (n < 1) Fail(ErrorKind::kArgument, "need at least one server");
  std::filesystem::create_directories(work_dir);
  const std::string config_path = (std::filesystem::path(work_dir) / "server-config.json").string();
  config::SaveServerConfig(tmpl, config_path);

  std::vector<ServerProcess> servers;
  servers.reserve(n);
  for (size_t j = 0; j < n; ++j) {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) {
      Fail(ErrorKind::kLaunch, SysError("server " + std::to_string(j) + ": pipe"));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    std::vector<std::string> args = {esf_binary,
                                     "serve",
                                     "--bind",
                                     tmpl.bind.host + ":0",
                                     "--config",
                                     config_path,
                                     "--server-index",
                                     std::to_string(j),
                                     "--num-servers",
                                     std::to_string(n)};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, esf_binary.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    if (rc != 0) {
      ::close(fds[0]);
      Fail(ErrorKind::kLaunch, "server " + std::to_string(j) + ": cannot spawn " + esf_binary +
                                   ": " + std::strerror(rc));
    }
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(startup_timeout_s));
    std::optional<std::string> line;
    while ((line = ReadLine(fds[0], deadline))) {
      if (line->rfind("LISTENING ", 0) == 0) break;
    }
    std::optional<Endpoint> ep;
    try {
      if (line) ep = ParseEndpoint(line->substr(10));
    } catch (const Error&) {
    }
    if (!ep) {
      ServerProcess failed(pid, Endpoint{}, fds[0]);
      Fail(ErrorKind::kLaunch, "server " + std::to_string(j) + " did not report its endpoint");
    }
    servers.emplace_back(pid, *ep, fds[0]);
  }
  return servers;
}

}  // namespace esf::exserver
