// tests/acoustic_sim_test.cc

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

#include "esf/acoustic_sim.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "esf/error.h"

namespace esf::sim {
namespace {

constexpr double kPi = std::numbers::pi;

double Dist(const Vec3& a, const Vec3& b) {
  return std::sqrt(std::pow(a[0] - b[0], 2) + std::pow(a[1] - b[1], 2) + std::pow(a[2] - b[2], 2));
}

// Mirrors the source across walls recursively, never across the wall it was
// just reflected from, and keeps each distinct position once.
void Mirror(const RoomSpec& room, const Vec3& pos, int depth, int last_wall, int max_depth,
            std::map<Vec3, int>* out) {
  out->emplace(pos, depth);
  if (depth == max_depth) return;
  for (int wall = 0; wall < 6; ++wall) {
    if (wall == last_wall) continue;
    const int axis = wall / 2;
    const double plane = wall % 2 ? room.dims[axis] : 0.0;
    Vec3 next = pos;
    next[axis] = 2.0 * plane - pos[axis];
    Mirror(room, next, depth + 1, wall, max_depth, out);
  }
}

std::vector<double> BruteForceRir(const RoomSpec& room, int fs, size_t length) {
  std::map<Vec3, int> images;
  Mirror(room, room.source, 0, -1, room.max_image_order, &images);
  const double beta = ReflectionCoefficient(room);
  std::vector<double> taps(length, 0.0);
  for (const auto& [pos, order] : images) {
    const double d = Dist(pos, room.mic);
    const double amp = std::pow(beta, order) / (4.0 * kPi * d);
    const double delay = d / room.speed_of_sound * fs;
    const size_t i0 = static_cast<size_t>(std::floor(delay));
    taps.at(i0) += (1.0 - (delay - i0)) * amp;
    taps.at(i0 + 1) += (delay - i0) * amp;
  }
  return taps;
}

TEST(ImageTest, CountAtOrderTwo) {
  RoomSpec room;
  room.max_image_order = 2;
  EXPECT_EQ(EnumerateImages(room).size(), 25u);
  std::map<Vec3, int> images;
  Mirror(room, room.source, 0, -1, 2, &images);
  EXPECT_EQ(images.size(), 25u);
}

TEST(ImageTest, RirMatchesBruteForce) {
  Rng rng(11);
  SimulatorConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    RoomSpec room = SampleRoom(rng, cfg);
    room.max_image_order = 2;
    const ImpulseResponse h = ComputeRir(room, 16000);
    const auto ref = BruteForceRir(room, 16000, h.taps.size() + 1);
    double peak = 0.0;
    for (double v : ref) peak = std::max(peak, std::abs(v));
    for (size_t i = 0; i < h.taps.size(); ++i) {
      EXPECT_LE(std::abs(h.taps[i] - ref[i]), 1e-10 * peak) << "trial " << trial << " tap " << i;
    }
    EXPECT_EQ(ref.back(), 0.0);
  }
}

TEST(ImageTest, DirectPathFirst) {
  RoomSpec room;
  room.max_image_order = 3;
  const ImpulseResponse h = ComputeRir(room, 16000);
  const double delay = DirectPathDelay(room, 16000);
  size_t first = 0;
  while (h.taps[first] == 0.0) ++first;
  EXPECT_EQ(first, static_cast<size_t>(std::floor(delay)));
}

TEST(RoomTest, Validation) {
  RoomSpec room;
  room.mic = {6.0, 1.0, 1.0};
  EXPECT_THROW(room.Validate(), Error);
  RoomSpec same;
  same.mic = same.source;
  try {
    ComputeRir(same, 16000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kGeometry);
  }
}

TEST(AbsorptionTest, SabineClosedForm) {
  RoomSpec room;
  room.absorption_model = AbsorptionModel::kSabine;
  EXPECT_NEAR(WallAbsorption(room), 0.238990598713508, 1e-12);
  room.target_t60 = 0.01;
  EXPECT_EQ(WallAbsorption(room), 1.0);
}

TEST(AbsorptionTest, LongerT60ReflectsMore) {
  for (auto model : {AbsorptionModel::kSabine, AbsorptionModel::kEyring, AbsorptionModel::kShoebox}) {
    RoomSpec a, b;
    a.absorption_model = b.absorption_model = model;
    a.target_t60 = 0.3;
    b.target_t60 = 0.7;
    EXPECT_GT(ReflectionCoefficient(b), ReflectionCoefficient(a));
  }
}

TEST(T60Test, EstimateNearTarget) {
  Rng rng(21);
  SimulatorConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    RoomSpec room = SampleRoom(rng, cfg);
    const double min_len = *std::min_element(room.dims.begin(), room.dims.end());
    room.max_image_order = std::max(
        20, static_cast<int>(std::ceil(room.target_t60 * 45.0 / 60.0 * kSpeedOfSound / min_len)) + 2);
    ImpulseResponse h = ComputeRir(room, 16000);
    const size_t keep = static_cast<size_t>((room.max_image_order + 1) * min_len / kSpeedOfSound * 16000);
    if (h.taps.size() > keep) h.taps.resize(keep);
    const double est = EstimateT60(h.taps, 16000);
    EXPECT_NEAR(est / room.target_t60, 1.0, 0.25) << "target " << room.target_t60;
  }
}

TEST(T60Test, ExponentialDecay) {
  // 100 Hz high-pass leaves a white exponential tail's slope intact.
  Rng rng(2);
  const int fs = 16000;
  const double t60 = 0.5;
  std::vector<double> taps(fs);
  for (int i = 0; i < fs; ++i) {
    taps[i] = rng.Gaussian() * std::pow(10.0, -3.0 * i / (t60 * fs));
  }
  EXPECT_NEAR(EstimateT60(taps, fs), t60, 0.02);
}

TEST(T60Test, SilenceIsDegenerate) {
  std::vector<double> taps(100, 0.0);
  try {
    EstimateT60(taps, 16000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerate);
  }
}

TEST(ConvolveTest, MatchesNaive) {
  Rng rng(3);
  for (size_t n : {50u, 5000u}) {
    dsp::Waveform w{std::vector<double>(n), 16000};
    for (auto& v : w.samples) v = rng.Uniform(-1, 1);
    ImpulseResponse h{std::vector<double>(300), 16000};
    for (auto& v : h.taps) v = rng.Uniform(-1, 1);
    const dsp::Waveform y = ApplyRir(w, h);
    ASSERT_EQ(y.size(), n);
    for (size_t i = 0; i < n; i += 7) {
      double acc = 0.0;
      for (size_t k = 0; k <= i && k < h.taps.size(); ++k) acc += h.taps[k] * w.samples[i - k];
      EXPECT_NEAR(y.samples[i], acc, 1e-9);
    }
  }
}

double MeasuredSnr(const dsp::Waveform& speech, const MixResult& mix) {
  std::vector<double> s(speech.samples), n(speech.size());
  for (size_t i = 0; i < s.size(); ++i) {
    s[i] *= mix.peak_scale;
    n[i] = mix.waveform.samples[i] - s[i];
  }
  return 10.0 * std::log10(MeanSquare(s) / MeanSquare(n));
}

TEST(MixTest, HitsTargetSnr) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    dsp::Waveform speech{std::vector<double>(1000 + rng.Below(2000)), 16000};
    for (auto& v : speech.samples) v = 0.3 * rng.Gaussian();
    dsp::Waveform noise{std::vector<double>(300 + rng.Below(3000)), 16000};
    for (auto& v : noise.samples) v = rng.Uniform(-1, 1);
    const double snr = rng.Uniform(-5.0, 30.0);
    const MixResult mix = MixNoise(speech, noise, snr, rng.Below(500));
    EXPECT_NEAR(MeasuredSnr(speech, mix), snr, 0.01);
  }
}

TEST(MixTest, PeakProtection) {
  dsp::Waveform speech{std::vector<double>(100, 0.9), 16000};
  dsp::Waveform noise{{1.0, -1.0}, 16000};
  const MixResult mix = MixNoise(speech, noise, 0.0);
  EXPECT_TRUE(mix.peak_protected);
  double peak = 0.0;
  for (double v : mix.waveform.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 1.0, 1e-12);
  EXPECT_NEAR(MeasuredSnr(speech, mix), 0.0, 1e-9);
}

TEST(MixTest, Degenerate) {
  dsp::Waveform speech{std::vector<double>(10, 0.1), 16000};
  dsp::Waveform silent{std::vector<double>(10, 0.0), 16000};
  EXPECT_THROW(MixNoise(speech, silent, 10.0), Error);
  EXPECT_THROW(MixNoise(silent, speech, 10.0), Error);
  EXPECT_EQ(MixNoise(speech, silent, kNoNoise).waveform.samples, speech.samples);
}

TEST(SimulateTest, DeterministicWithMetadata) {
  recordio::UtteranceRecord utt;
  utt.utt_id = "u";
  utt.samples.resize(8000);
  Rng tone(1);
  for (auto& s : utt.samples) s = static_cast<int16_t>(tone.Uniform(-3000, 3000));
  SimulatorConfig cfg;
  Rng a(9), b(9);
  SimulationInfo info;
  const auto ra = Simulate(utt, a, cfg, *NoiseBank::FromSource(cfg.noise_source), &info);
  const auto rb = Simulate(utt, b, cfg);
  EXPECT_EQ(ra, rb);
  EXPECT_TRUE(info.reverberated);
  EXPECT_TRUE(info.noised);
  EXPECT_TRUE(ra.Meta(kMetaRoomT60).has_value());
  EXPECT_TRUE(ra.Meta(kMetaSnr).has_value());
  EXPECT_EQ(ra.samples.size(), utt.samples.size());
}

TEST(SimulateTest, ProbabilityZeroIsIdentity) {
  recordio::UtteranceRecord utt;
  utt.utt_id = "u";
  utt.samples.assign(1000, 100);
  SimulatorConfig cfg;
  cfg.probability_of_noise = cfg.probability_of_reverb = 0.0;
  Rng rng(1);
  EXPECT_EQ(Simulate(utt, rng, cfg), utt);
}

TEST(NoiseBankTest, UnknownSynthetic) {
  EXPECT_THROW(NoiseBank::FromSource("synthetic:pink"), Error);
}

}  // namespace
}  // namespace esf::sim
