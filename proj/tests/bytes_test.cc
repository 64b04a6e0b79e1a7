// tests/bytes_test.cc

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

#include <gtest/gtest.h>

#include "esf/error.h"
#include "esf/random.h"

namespace esf {
namespace {

// Bit-at-a-time reflected CRC32C.
uint32_t SlowCrc32c(std::string_view data) {
  uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char c : data) {
    crc ^= c;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0x82F63B78u & (0u - (crc & 1u)));
  }
  return ~crc;
}

TEST(Crc32cTest, CheckValue) { EXPECT_EQ(Crc32c("123456789"), 0xE3069283u); }

TEST(Crc32cTest, MatchesBitwiseReference) {
  Rng rng(3);
  for (int n : {0, 1, 7, 8, 63, 64, 1000, 4099}) {
    std::string data(n, '\0');
    for (auto& c : data) c = static_cast<char>(rng.Below(256));
    EXPECT_EQ(Crc32c(data), SlowCrc32c(data)) << "length " << n;
  }
}

TEST(ByteCodingTest, RoundTrip) {
  std::string buf;
  PutU8(&buf, 0xAB);
  PutU32(&buf, 0xDEADBEEF);
  PutU64(&buf, 0x0123456789ABCDEFull);
  PutF32(&buf, -1.5f);
  ASSERT_EQ(buf.size(), 17u);
  EXPECT_EQ(static_cast<unsigned char>(buf[1]), 0xEF);  // little-endian

  ByteReader r(buf);
  EXPECT_EQ(r.U8(), 0xAB);
  EXPECT_EQ(r.U32(), 0xDEADBEEFu);
  EXPECT_EQ(r.U64(), 0x0123456789ABCDEFull);
  EXPECT_EQ(r.F32(), -1.5f);
  EXPECT_TRUE(r.done());
  try {
    r.U8();
    FAIL() << "read past the end";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTruncation);
  }
}

TEST(TlvTest, RoundTrip) {
  std::string buf;
  PutTlv(&buf, 1, "abc");
  PutTlv(&buf, 9, "");
  PutTlv(&buf, 2, std::string(300, 'x'));
  TlvReader r(buf);
  uint8_t tag;
  std::string_view value;
  ASSERT_TRUE(r.Next(&tag, &value));
  EXPECT_EQ(tag, 1);
  EXPECT_EQ(value, "abc");
  ASSERT_TRUE(r.Next(&tag, &value));
  EXPECT_EQ(tag, 9);
  EXPECT_TRUE(value.empty());
  ASSERT_TRUE(r.Next(&tag, &value));
  EXPECT_EQ(value.size(), 300u);
  EXPECT_FALSE(r.Next(&tag, &value));
}

TEST(TlvTest, TruncatedValueThrows) {
  std::string buf;
  PutTlv(&buf, 1, "abcdef");
  buf.pop_back();
  TlvReader r(buf);
  uint8_t tag;
  std::string_view value;
  EXPECT_THROW(r.Next(&tag, &value), Error);
}

TEST(RngTest, BelowIsInRangeAndDeterministic) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const uint64_t x = a.Below(7);
    EXPECT_LT(x, 7u);
    EXPECT_EQ(x, b.Below(7));
  }
  EXPECT_EQ(Rng(1).Uniform(2.0, 2.0), 2.0);
}

TEST(HashTest, OrderSensitive) {
  EXPECT_NE(Hash64(1, 2), Hash64(2, 1));
  EXPECT_NE(Hash64(1, 2, 3), Hash64(1, 3, 2));
}

}  // namespace
}  // namespace esf
