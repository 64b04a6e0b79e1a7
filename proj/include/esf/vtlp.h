// include/esf/vtlp.h

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

#ifndef ESF_VTLP_H_
#define ESF_VTLP_H_

// Vocal tract length perturbation by bilinear frequency warping and STFT
// resynthesis.
//
// The warp maps an input frequency w in [0, pi] to
//
//   w' = w + 2 atan( (1 - a) sin w / (1 - (1 - a) cos w) )
//
// which fixes 0 and pi and is strictly increasing for 0 < a < 2.  a < 1 moves
// spectral content up, a > 1 moves it down.

#include <cstdint>
#include <span>
#include <utility>

#include "esf/dsp.h"
#include "esf/random.h"

namespace esf::vtlp {

struct WarpSpec {
  double alpha = 1.0;
  double alpha_min = 0.8;
  double alpha_max = 1.2;
  double analysis_window_ms = 50.0;
  double analysis_hop_ms = 12.5;
  int dft_size = 1024;

  dsp::StftConfig Analysis() const;
  void Validate() const;
};

inline constexpr double kInvertTolerance = 1e-9;

double WarpFrequency(double omega, double alpha);

// Bisection on the monotone map: |WarpFrequency(result) - target| <= tol.
double InvertWarp(double target, double alpha, double tol = kInvertTolerance);

// Fractional input-bin position feeding each output bin of a K-point
// half-spectrum.
std::vector<double> WarpSourceBins(double alpha, int dft_size);

// Output bin k' takes the complex value of the input spectrum linearly
// interpolated at the inverse-warped position of 2 pi k'/K.
dsp::ComplexFrame WarpSpectrum(std::span<const std::complex<double>> frame,
                               double alpha);

double SampleAlpha(Rng& rng, const WarpSpec& spec);

struct VtlpResult {
  dsp::Waveform waveform;
  double alpha = 1.0;
  // Set when the input was shorter than one analysis window and came back
  // unwarped.
  bool passthrough = false;
};

VtlpResult VtlpResynthesize(const dsp::Waveform& w, const WarpSpec& spec,
                            double alpha);
VtlpResult VtlpResynthesize(const dsp::Waveform& w, const WarpSpec& spec,
                            Rng& rng);

}  // namespace esf::vtlp

#endif  // ESF_VTLP_H_
