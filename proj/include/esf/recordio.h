// include/esf/recordio.h

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

#ifndef ESF_RECORDIO_H_
#define ESF_RECORDIO_H_

// Sharded utterance storage.
//
// Shard file:   "ESRD" u8(version=1) frame*
// Frame:        u64 LE payload length
//               u32 LE CRC32C of the 8 length bytes
//               payload
//               u32 LE CRC32C of payload
// Payload:      TLV fields; 1=utt_id 2=sample_rate(u32) 3=samples(int16 LE)
//               4=transcript 5=metadata pair (u32 key length, key, value).
//               Unknown tags are skipped.

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace esf::recordio {

inline constexpr char kShardMagic[4] = {'E', 'S', 'R', 'D'};
inline constexpr uint8_t kShardVersion = 1;
inline constexpr size_t kShardHeaderSize = 5;
inline constexpr size_t kFrameOverhead = 16;

using Metadata = std::vector<std::pair<std::string, std::string>>;

struct UtteranceRecord {
  std::string utt_id;
  uint32_t sample_rate = 16000;
  std::vector<int16_t> samples;
  std::string transcript;
  Metadata metadata;

  bool operator==(const UtteranceRecord&) const = default;

  // First value stored under `key`, if any.
  std::optional<std::string> Meta(std::string_view key) const;
  // Replaces an existing entry or appends a new one.
  void SetMeta(const std::string& key, const std::string& value);
};

struct ShardSet {
  std::vector<std::string> shard_paths;

  size_t num_shards() const { return shard_paths.size(); }
};

std::string EncodeRecord(const UtteranceRecord& record);
UtteranceRecord DecodeRecord(std::string_view payload);

// Wraps a payload in a CRC-protected frame (16 + payload bytes).
std::string FrameRecord(std::string_view payload);

// Expands the "{}" placeholder in `pattern` to a zero-padded 5-digit index.
std::string ShardPath(const std::string& pattern, size_t index);

class ShardWriter {
 public:
  explicit ShardWriter(const std::string& path);
  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;
  ~ShardWriter();

  void Write(const UtteranceRecord& record);
  void WritePayload(std::string_view payload);
  void Close();

 private:
  std::string path_;
  std::ofstream out_;
};

// Streams records of one shard in file order.  Both CRCs are checked for
// every frame; a failure throws an esf::Error carrying the frame offset.
class ShardReader {
 public:
  explicit ShardReader(const std::string& path);

  std::optional<UtteranceRecord> Next();
  std::optional<std::string> NextPayload();

  const std::string& path() const { return path_; }
  // Byte offset of the next frame.
  uint64_t offset() const { return offset_; }

 private:
  std::string path_;
  std::ifstream in_;
  uint64_t offset_ = 0;
  uint64_t file_size_ = 0;
};

// Record i goes to shard (i mod num_shards); order within a shard follows
// the input order.
ShardSet WriteShards(std::span<const UtteranceRecord> records,
                     size_t num_shards, const std::string& path_pattern);

std::vector<UtteranceRecord> ReadShard(const std::string& path);

// PCM helpers: float = int16 / 32768.
std::vector<double> PcmToFloat(std::span<const int16_t> pcm);
std::vector<int16_t> FloatToPcm(std::span<const double> samples);

}  // namespace esf::recordio

#endif  // ESF_RECORDIO_H_
