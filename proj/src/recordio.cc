// src/recordio.cc

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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "esf/bytes.h"
#include "esf/error.h"

namespace esf::recordio {

namespace {

enum : uint8_t {
  kTagUttId = 1,
  kTagSampleRate = 2,
  kTagSamples = 3,
  kTagTranscript = 4,
  kTagMetadata = 5,
};

}  // namespace

std::optional<std::string> UtteranceRecord::Meta(std::string_view key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void UtteranceRecord::SetMeta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = value;
      return;
    }
  }
  metadata.emplace_back(key, value);
}

std::string EncodeRecord(const UtteranceRecord& record) {
  if (record.utt_id.empty()) Fail(ErrorKind::kArgument, "utt_id is empty");
  if (record.sample_rate == 0) {
    Fail(ErrorKind::kArgument, "sample_rate is zero for " + record.utt_id);
  }
  std::string out;
  out.reserve(64 + record.samples.size() * 2 + record.transcript.size());
  PutTlv(&out, kTagUttId, record.utt_id);

  std::string rate;
  PutU32(&rate, record.sample_rate);
  PutTlv(&out, kTagSampleRate, rate);

  std::string pcm;
  pcm.reserve(record.samples.size() * 2);
  for (int16_t s : record.samples) {
    auto u = static_cast<uint16_t>(s);
    pcm.push_back(static_cast<char>(u & 0xFF));
    pcm.push_back(static_cast<char>(u >> 8));
  }
  PutTlv(&out, kTagSamples, pcm);
  PutTlv(&out, kTagTranscript, record.transcript);

  for (const auto& [key, value] : record.metadata) {
    std::string pair;
    PutU32(&pair, static_cast<uint32_t>(key.size()));
    pair += key;
    pair += value;
    PutTlv(&out, kTagMetadata, pair);
  }
  return out;
}

UtteranceRecord DecodeRecord(std::string_view payload) {
  UtteranceRecord record;
  record.sample_rate = 0;
  bool have_id = false;
  TlvReader tlv(payload);
  uint8_t tag;
  std::string_view value;
  try {
    while (tlv.Next(&tag, &value)) {
      switch (tag) {
        case kTagUttId:
          record.utt_id.assign(value);
          have_id = true;
          break;
        case kTagSampleRate:
          if (value.size() != 4) Fail(ErrorKind::kFormat, "sample_rate field size");
          record.sample_rate = DecodeU32(value.data());
          break;
        case kTagSamples: {
          if (value.size() % 2 != 0) Fail(ErrorKind::kFormat, "odd PCM byte count");
          record.samples.resize(value.size() / 2);
          for (size_t i = 0; i < record.samples.size(); ++i) {
            auto lo = static_cast<uint8_t>(value[2 * i]);
            auto hi = static_cast<uint8_t>(value[2 * i + 1]);
            record.samples[i] =
                static_cast<int16_t>(static_cast<uint16_t>(lo | (hi << 8)));
          }
          break;
        }
        case kTagTranscript:
          record.transcript.assign(value);
          break;
        case kTagMetadata: {
          ByteReader r(value);
          uint32_t key_len = r.U32();
          std::string key(r.Bytes(key_len));
          std::string val(r.Bytes(r.remaining()));
          record.metadata.emplace_back(std::move(key), std::move(val));
          break;
        }
        default:
          break;
      }
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kTruncation) {
      Fail(ErrorKind::kFormat, std::string("malformed record payload: ") + e.what());
    }
    throw;
  }
  if (!have_id || record.utt_id.empty()) Fail(ErrorKind::kFormat, "record without utt_id");
  if (record.sample_rate == 0) {
    Fail(ErrorKind::kFormat, "record " + record.utt_id + " without sample_rate");
  }
  return record;
}

std::string FrameRecord(std::string_view payload) {
  std::string frame;
  frame.reserve(kFrameOverhead + payload.size());
  PutU64(&frame, payload.size());
  PutU32(&frame, Crc32c(frame.data(), 8));
  frame.append(payload);
  PutU32(&frame, Crc32c(payload));
  return frame;
}

std::string ShardPath(const std::string& pattern, size_t index) {
  size_t pos = pattern.find("{}");
  if (pos == std::string::npos || pattern.find("{}", pos + 2) != std::string::npos) {
    Fail(ErrorKind::kArgument,
         "path pattern must contain exactly one '{}' placeholder: " + pattern);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return pattern.substr(0, pos) + buf + pattern.substr(pos + 2);
}

ShardWriter::ShardWriter(const std::string& path) : path_(path) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) Fail(ErrorKind::kIo, "cannot open for writing: " + path);
  out_.write(kShardMagic, 4);
  out_.put(static_cast<char>(kShardVersion));
  if (!out_) Fail(ErrorKind::kIo, "write failed: " + path);
}

ShardWriter::~ShardWriter() {
  if (out_.is_open()) out_.close();
}

void ShardWriter::Write(const UtteranceRecord& record) {
  WritePayload(EncodeRecord(record));
}

void ShardWriter::WritePayload(std::string_view payload) {
  std::string frame = FrameRecord(payload);
  out_.write(frame.data(), static_cast<std::streamsize>(frame.size()));
  if (!out_) Fail(ErrorKind::kIo, "write failed: " + path_);
}

void ShardWriter::Close() {
  out_.flush();
  if (!out_) Fail(ErrorKind::kIo, "flush failed: " + path_);
  out_.close();
}

ShardReader::ShardReader(const std::string& path) : path_(path) {
  in_.open(path, std::ios::binary);
  if (!in_) Fail(ErrorKind::kIo, "cannot open shard: " + path);
  std::error_code ec;
  file_size_ = std::filesystem::file_size(path, ec);
  if (ec) Fail(ErrorKind::kIo, "cannot stat shard: " + path);
  char header[kShardHeaderSize];
  in_.read(header, kShardHeaderSize);
  if (in_.gcount() != static_cast<std::streamsize>(kShardHeaderSize) ||
      !std::equal(header, header + 4, kShardMagic)) {
    throw Error(ErrorKind::kFormat, "bad shard magic in " + path, 0);
  }
  if (static_cast<uint8_t>(header[4]) != kShardVersion) {
    throw Error(ErrorKind::kFormat,
                "unsupported shard version " +
                    std::to_string(static_cast<uint8_t>(header[4])) + " in " + path,
                4);
  }
  offset_ = kShardHeaderSize;
}

std::optional<std::string> ShardReader::NextPayload() {
  if (offset_ == file_size_) return std::nullopt;
  const uint64_t frame_start = offset_;
  auto truncated = [&](const char* what) {
    throw Error(ErrorKind::kTruncation,
                std::string("truncated frame (") + what + ") at byte " +
                    std::to_string(frame_start) + " in " + path_,
                frame_start);
  };
  char head[12];
  in_.read(head, 12);
  if (in_.gcount() != 12) truncated("length header");
  const uint64_t length = DecodeU64(head);
  if (Crc32c(head, 8) != DecodeU32(head + 8)) {
    throw Error(ErrorKind::kCorruption,
                "length CRC mismatch at byte " + std::to_string(frame_start) +
                    " in " + path_,
                frame_start);
  }
  if (length > file_size_ - frame_start - 12 ||
      file_size_ - frame_start - 12 - length < 4) {
    truncated("payload");
  }
  std::string payload(length, '\0');
  in_.read(payload.data(), static_cast<std::streamsize>(length));
  char tail[4];
  in_.read(tail, 4);
  if (!in_) truncated("payload");
  if (Crc32c(payload) != DecodeU32(tail)) {
    throw Error(ErrorKind::kCorruption,
                "payload CRC mismatch at byte " + std::to_string(frame_start) +
                    " in " + path_,
                frame_start);
  }
  offset_ = frame_start + kFrameOverhead + length;
  return payload;
}

std::optional<UtteranceRecord> ShardReader::Next() {
  auto payload = NextPayload();
  if (!payload) return std::nullopt;
  return DecodeRecord(*payload);
}

ShardSet WriteShards(std::span<const UtteranceRecord> records,
                     size_t num_shards, const std::string& path_pattern) {
  if (num_shards < 1) Fail(ErrorKind::kArgument, "num_shards must be >= 1");
  ShardSet set;
  std::vector<std::unique_ptr<ShardWriter>> writers;
  for (size_t s = 0; s < num_shards; ++s) {
    set.shard_paths.push_back(ShardPath(path_pattern, s));
    writers.push_back(std::make_unique<ShardWriter>(set.shard_paths.back()));
  }
  for (size_t i = 0; i < records.size(); ++i) {
    writers[i % num_shards]->Write(records[i]);
  }
  for (auto& w : writers) w->Close();
  return set;
}

std::vector<UtteranceRecord> ReadShard(const std::string& path) {
  ShardReader reader(path);
  std::vector<UtteranceRecord> out;
  while (auto r = reader.Next()) out.push_back(std::move(*r));
  return out;
}

std::vector<double> PcmToFloat(std::span<const int16_t> pcm) {
  std::vector<double> out(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i) out[i] = pcm[i] / 32768.0;
  return out;
}

std::vector<int16_t> FloatToPcm(std::span<const double> samples) {
  std::vector<int16_t> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    double v = std::nearbyint(samples[i] * 32768.0);
    out[i] = static_cast<int16_t>(std::clamp(v, -32768.0, 32767.0));
  }
  return out;
}

}  // namespace esf::recordio
