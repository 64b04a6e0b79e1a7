// include/esf/random.h

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

#ifndef ESF_RANDOM_H_
#define ESF_RANDOM_H_

#include <cstdint>
#include <random>

namespace esf {

// splitmix64 finalizer.
uint64_t Mix64(uint64_t x);

// Order-sensitive combination used for per-record seeds.
uint64_t Hash64(uint64_t a, uint64_t b);
uint64_t Hash64(uint64_t a, uint64_t b, uint64_t c);

// FNV-1a over raw bytes, folded through Mix64.
uint64_t HashBytes(const void* data, size_t n, uint64_t seed = 0);

// Seeded generator with distributions defined here rather than by the
// standard library, so streams are identical across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t Bits() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform01();
  // Uniform in [lo, hi]; returns lo when lo == hi.
  double Uniform(double lo, double hi);
  // Unbiased integer in [0, n).
  uint64_t Below(uint64_t n);
  double Gaussian();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace esf

#endif  // ESF_RANDOM_H_
