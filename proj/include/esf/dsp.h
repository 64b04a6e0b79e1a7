// include/esf/dsp.h

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

#ifndef ESF_DSP_H_
#define ESF_DSP_H_

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace esf::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  size_t size() const { return samples.size(); }
};

enum class WindowType { kHann };

struct StftConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int dft_size = 512;
  WindowType window = WindowType::kHann;

  size_t WindowSamples(int sample_rate) const;
  size_t HopSamples(int sample_rate) const;
  // Throws kConfig when the analysis parameters are unusable at this rate.
  void Validate(int sample_rate) const;
};

// Shipped analysis settings: the feature front-end, the VTLP analysis window
// and half/quarter-overlap variants.
std::vector<StftConfig> StftPresets();

using ComplexFrame = std::vector<std::complex<double>>;

struct Spectrogram {
  std::vector<ComplexFrame> frames;
  StftConfig config;
  int sample_rate = 16000;
  // Length of the analysed signal span, (M - 1) * hop + window.
  size_t signal_length = 0;

  size_t num_frames() const { return frames.size(); }
  size_t num_bins() const { return static_cast<size_t>(config.dft_size) / 2 + 1; }
};

enum class FeatureKind { kMelEnergy, kPowerMel, kMfcc };

const char* FeatureKindName(FeatureKind kind);

struct FeatureMatrix {
  size_t num_frames = 0;
  size_t num_coeffs = 0;
  std::vector<double> values;  // row-major, frame per row
  FeatureKind kind = FeatureKind::kMelEnergy;

  double at(size_t frame, size_t coeff) const { return values[frame * num_coeffs + coeff]; }
  double& at(size_t frame, size_t coeff) { return values[frame * num_coeffs + coeff]; }
  bool operator==(const FeatureMatrix&) const = default;
};

std::vector<double> MakeWindow(WindowType type, size_t length);

// Real-input DFT of size K (K/2+1 bins) and its inverse, scaled so that
// InverseRealDft(ForwardRealDft(x)) == x.
ComplexFrame ForwardRealDft(std::span<const double> input, size_t dft_size);
std::vector<double> InverseRealDft(std::span<const std::complex<double>> bins,
                                   size_t dft_size);

// Frame m covers samples [m*hop, m*hop + window), windowed and zero-padded
// to K before the transform.
Spectrogram Stft(const Waveform& w, const StftConfig& cfg);

// Weighted overlap-add inverse.  Samples whose summed squared window is zero
// (outside the valid interior) come back as 0.
Waveform Istft(const Spectrogram& s);

// HTK mel scale.
double HzToMel(double hz);
double MelToHz(double mel);

// Triangular filter weights over the K/2+1 bins, one row per filter.
std::vector<std::vector<double>> MelFilterbank(int num_filters, double fmin,
                                               double fmax, int sample_rate,
                                               int dft_size);

FeatureMatrix MelEnergies(const Spectrogram& s, int num_filters, double fmin,
                          double fmax);

inline constexpr double kPowerMelExponent = 1.0 / 15.0;

// Elementwise x^(1/15).  No range clipping is applied.
FeatureMatrix PowerMelFeatures(const FeatureMatrix& mel_energies);

inline constexpr double kMfccLogFloor = 1e-10;

// log(max(e, 1e-10)) followed by an orthonormal type-II DCT, keeping the first
// num_ceps coefficients.
FeatureMatrix Mfcc(const FeatureMatrix& mel_energies, int num_ceps);

struct FrontendConfig {
  StftConfig stft;
  int num_filters = 40;
  double fmin = 125.0;
  double fmax = 7600.0;
  FeatureKind kind = FeatureKind::kPowerMel;
  int num_ceps = 13;
};

FeatureMatrix ComputeFeatures(const Waveform& w, const FrontendConfig& cfg);

std::string FeaturesToCsv(const FeatureMatrix& features);

// 16-bit PCM mono RIFF/WAVE.
Waveform ReadWav(const std::string& path);
void WriteWav(const std::string& path, const Waveform& w);

}  // namespace esf::dsp

#endif  // ESF_DSP_H_
