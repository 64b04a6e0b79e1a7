// src/bytes.cc

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

#include "esf/bytes.h"

#include <bit>
#include <cstring>

#include <boost/crc.hpp>

#include "esf/error.h"

namespace esf {

using Crc32cEngine =
    boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true>;

uint32_t Crc32c(const void* data, size_t n) {
  Crc32cEngine crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

uint32_t Crc32c(std::string_view data) {
  return Crc32c(data.data(), data.size());
}

void PutU8(std::string* out, uint8_t v) { out->push_back(static_cast<char>(v)); }

void PutU32(std::string* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>(v >> (8 * i)));
}

void PutU64(std::string* out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out->push_back(static_cast<char>(v >> (8 * i)));
}

void PutF32(std::string* out, float v) { PutU32(out, std::bit_cast<uint32_t>(v)); }

uint32_t DecodeU32(const char* p) {
  const auto* u = reinterpret_cast<const unsigned char*>(p);
  return static_cast<uint32_t>(u[0]) | (static_cast<uint32_t>(u[1]) << 8) |
         (static_cast<uint32_t>(u[2]) << 16) |
         (static_cast<uint32_t>(u[3]) << 24);
}

uint64_t DecodeU64(const char* p) {
  return static_cast<uint64_t>(DecodeU32(p)) |
         (static_cast<uint64_t>(DecodeU32(p + 4)) << 32);
}

float DecodeF32(const char* p) { return std::bit_cast<float>(DecodeU32(p)); }

void ByteReader::Need(size_t n) const {
  if (n > remaining()) {
    throw Error(ErrorKind::kTruncation,
                "need " + std::to_string(n) + " bytes at position " +
                    std::to_string(pos_) + ", have " +
                    std::to_string(remaining()),
                pos_);
  }
}

uint8_t ByteReader::U8() {
  Need(1);
  return static_cast<uint8_t>(data_[pos_++]);
}

uint32_t ByteReader::U32() {
  Need(4);
  uint32_t v = DecodeU32(data_.data() + pos_);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::U64() {
  Need(8);
  uint64_t v = DecodeU64(data_.data() + pos_);
  pos_ += 8;
  return v;
}

float ByteReader::F32() { return std::bit_cast<float>(U32()); }

std::string_view ByteReader::Bytes(size_t n) {
  Need(n);
  std::string_view v = data_.substr(pos_, n);
  pos_ += n;
  return v;
}

void PutTlv(std::string* out, uint8_t tag, std::string_view value) {
  PutU8(out, tag);
  PutU32(out, static_cast<uint32_t>(value.size()));
  out->append(value);
}

bool TlvReader::Next(uint8_t* tag, std::string_view* value) {
  if (reader_.done()) return false;
  *tag = reader_.U8();
  uint32_t len = reader_.U32();
  *value = reader_.Bytes(len);
  return true;
}

}  // namespace esf
