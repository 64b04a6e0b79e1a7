// include/esf/bytes.h

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

#ifndef ESF_BYTES_H_
#define ESF_BYTES_H_

// Little-endian byte coding, CRC32C and the tag-length-value container shared
// by the shard payloads and the batch wire codec.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace esf {

// CRC32C (Castagnoli), unmasked.
uint32_t Crc32c(std::string_view data);
uint32_t Crc32c(const void* data, size_t n);

void PutU8(std::string* out, uint8_t v);
void PutU32(std::string* out, uint32_t v);
void PutU64(std::string* out, uint64_t v);
void PutF32(std::string* out, float v);

uint32_t DecodeU32(const char* p);
uint64_t DecodeU64(const char* p);
float DecodeF32(const char* p);

// Sequential reader over a byte span.  Running past the end throws a
// kTruncation error that names the position.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  uint8_t U8();
  uint32_t U32();
  uint64_t U64();
  float F32();
  std::string_view Bytes(size_t n);

  size_t position() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void Need(size_t n) const;

  std::string_view data_;
  size_t pos_ = 0;
};

// Tag-length-value: u8 tag, u32 LE length, bytes.
void PutTlv(std::string* out, uint8_t tag, std::string_view value);

class TlvReader {
 public:
  explicit TlvReader(std::string_view data) : reader_(data) {}
  // Returns false at the end of the buffer.
  bool Next(uint8_t* tag, std::string_view* value);

 private:
  ByteReader reader_;
};

}  // namespace esf

#endif  // ESF_BYTES_H_
