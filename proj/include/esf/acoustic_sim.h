// include/esf/acoustic_sim.h

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

#ifndef ESF_ACOUSTIC_SIM_H_
#define ESF_ACOUSTIC_SIM_H_

// On-the-fly far-field simulation: shoebox room sampling, image-source room
// impulse responses, reverberation and additive noise at a target SNR.

#include <array>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "esf/dsp.h"
#include "esf/random.h"
#include "esf/recordio.h"

namespace esf::sim {

using Vec3 = std::array<double, 3>;

inline constexpr double kSpeedOfSound = 343.0;
inline constexpr double kMinAbsorption = 1e-4;

// How the target T60 is turned into wall absorption.
enum class AbsorptionModel {
  kSabine,  // a = 0.161 V / (S T60)
  kEyring,  // a = 1 - exp(-0.161 V / (S T60))
  // a = 1 - exp(-g) with g chosen so that the direction-averaged image decay
  // of this box, E(t) = mean_u exp(-g c t sum_i |u_i| / L_i), has the target
  // T60 over the same -5..-25 dB span EstimateT60 fits.
  kShoebox,
};

struct RoomSpec {
  Vec3 dims{5.0, 4.0, 3.0};
  Vec3 source{1.0, 1.0, 1.5};
  Vec3 mic{4.0, 3.0, 1.5};
  double target_t60 = 0.43;
  int max_image_order = 20;
  double speed_of_sound = kSpeedOfSound;
  AbsorptionModel absorption_model = AbsorptionModel::kShoebox;

  void Validate() const;
  double Volume() const;
  double SurfaceArea() const;
};

struct ImpulseResponse {
  std::vector<double> taps;
  int sample_rate = 16000;
};

struct SimulatorConfig {
  Vec3 dims_min{3.0, 3.0, 2.5};
  Vec3 dims_max{10.0, 8.0, 4.0};
  double t60_min = 0.2;
  double t60_max = 0.8;
  double snr_min_db = 0.0;
  double snr_max_db = 25.0;
  // "synthetic:white" or the path of a shard holding noise recordings.
  std::string noise_source = "synthetic:white";
  double probability_of_reverb = 1.0;
  double probability_of_noise = 1.0;
  int max_image_order = 20;
  double wall_clearance = 0.3;
  AbsorptionModel absorption_model = AbsorptionModel::kShoebox;

  void Validate() const;
};

RoomSpec SampleRoom(Rng& rng, const SimulatorConfig& cfg);

// Sabine: 0.161 V / (S T60), clamped to [1e-4, 1].
double T60ToAbsorption(const RoomSpec& room);
// Absorption under the room's configured model, clamped to [1e-4, 1].
double WallAbsorption(const RoomSpec& room);
// Pressure reflection coefficient sqrt(1 - absorption).
double ReflectionCoefficient(const RoomSpec& room);

struct ImageSource {
  Vec3 position;
  int reflections = 0;
  double distance = 0.0;
  double amplitude = 0.0;
};

// All images of total reflection order <= room.max_image_order, in a fixed
// enumeration order.
std::vector<ImageSource> EnumerateImages(const RoomSpec& room);

// Each image deposits amplitude r^reflections / (4 pi d) at the fractional
// delay d / c * fs, split across the two neighbouring taps.
ImpulseResponse ComputeRir(const RoomSpec& room, int sample_rate);

// Direct path delay in (fractional) samples.
double DirectPathDelay(const RoomSpec& room, int sample_rate);

// Full convolution truncated to the input length.
dsp::Waveform ApplyRir(const dsp::Waveform& w, const ImpulseResponse& h);

// Schroeder backward integration, T60 extrapolated from the -5..-25 dB span.
// The response is high-passed at 100 Hz first: image deposits are all
// positive, and their DC build-up would otherwise dominate the late tail.
double EstimateT60(std::span<const double> taps, int sample_rate);

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct MixResult {
  dsp::Waveform waveform;
  double gain = 0.0;
  // Factor applied to the whole mixture when it would have clipped; 1 if not.
  double peak_scale = 1.0;
  bool peak_protected = false;
};

// speech + g * noise with g = sqrt(Ps / (Pn 10^(snr/10))).  The noise is read
// circularly from `noise_offset`, so shorter noise loops.
MixResult MixNoise(const dsp::Waveform& speech, const dsp::Waveform& noise,
                   double snr_db, size_t noise_offset = 0);

double MeanSquare(std::span<const double> x);

// Noise material for the simulator, shared read-only across workers.
class NoiseBank {
 public:
  static std::shared_ptr<const NoiseBank> FromSource(const std::string& source);

  // A noise waveform of at least `length` samples (looping is done by
  // MixNoise) drawn with `rng`.
  dsp::Waveform Draw(Rng& rng, size_t length, int sample_rate) const;

 private:
  bool synthetic_ = true;
  std::vector<dsp::Waveform> clips_;
};

struct SimulationInfo {
  bool reverberated = false;
  bool noised = false;
  RoomSpec room;
  double snr_db = kNoNoise;
  double peak_scale = 1.0;
};

// Metadata keys written by Simulate.
inline constexpr char kMetaRoomDims[] = "room.dims";
inline constexpr char kMetaRoomT60[] = "room.t60";
inline constexpr char kMetaSnr[] = "mix.snr_db";
inline constexpr char kMetaPeakScale[] = "mix.peak_scale";

recordio::UtteranceRecord Simulate(const recordio::UtteranceRecord& utt, Rng& rng,
                                   const SimulatorConfig& cfg,
                                   const NoiseBank& noise,
                                   SimulationInfo* info = nullptr);
recordio::UtteranceRecord Simulate(const recordio::UtteranceRecord& utt, Rng& rng,
                                   const SimulatorConfig& cfg);

}  // namespace esf::sim

#endif  // ESF_ACOUSTIC_SIM_H_
