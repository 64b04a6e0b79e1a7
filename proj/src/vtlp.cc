// src/vtlp.cc

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

#include "esf/vtlp.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "esf/error.h"

namespace esf::vtlp {

namespace {
constexpr double kPi = std::numbers::pi;

void CheckAlpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 2.0)) {
    Fail(ErrorKind::kDomain,
         "warping factor must lie in (0, 2), got " + std::to_string(alpha));
  }
}
}  // namespace

dsp::StftConfig WarpSpec::Analysis() const {
  return dsp::StftConfig{analysis_window_ms, analysis_hop_ms, dft_size,
                         dsp::WindowType::kHann};
}

void WarpSpec::Validate() const {
  CheckAlpha(alpha);
  if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max < 2.0)) {
    Fail(ErrorKind::kConfig, "alpha range must be an ordered interval inside (0, 2)");
  }
}

double WarpFrequency(double omega, double alpha) {
  if (!(omega >= 0.0 && omega <= kPi)) {
    Fail(ErrorKind::kDomain, "frequency must lie in [0, pi], got " + std::to_string(omega));
  }
  CheckAlpha(alpha);
  if (omega == 0.0 || omega == kPi || alpha == 1.0) return omega;
  const double beta = 1.0 - alpha;
  const double warped =
      omega + 2.0 * std::atan(beta * std::sin(omega) / (1.0 - beta * std::cos(omega)));
  return std::clamp(warped, 0.0, kPi);
}

double InvertWarp(double target, double alpha, double tol) {
  if (!(target >= 0.0 && target <= kPi)) {
    Fail(ErrorKind::kDomain, "frequency must lie in [0, pi], got " + std::to_string(target));
  }
  if (!(tol > 0.0)) Fail(ErrorKind::kArgument, "tolerance must be positive");
  CheckAlpha(alpha);
  if (alpha == 1.0 || target == 0.0 || target == kPi) return target;
  double lo = 0.0, hi = kPi;
  double mid = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    mid = 0.5 * (lo + hi);
    const double value = WarpFrequency(mid, alpha);
    if (std::abs(value - target) <= tol) break;
    if (value < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return mid;
}

std::vector<double> WarpSourceBins(double alpha, int dft_size) {
  CheckAlpha(alpha);
  const size_t bins = static_cast<size_t>(dft_size) / 2 + 1;
  std::vector<double> src(bins);
  for (size_t k = 0; k < bins; ++k) {
    if (alpha == 1.0) {
      src[k] = static_cast<double>(k);
      continue;
    }
    const double target = std::min(2.0 * kPi * k / dft_size, kPi);
    src[k] = InvertWarp(target, alpha) * dft_size / (2.0 * kPi);
  }
  return src;
}

namespace {

dsp::ComplexFrame ApplySourceBins(std::span<const std::complex<double>> frame,
                                  const std::vector<double>& src) {
  const size_t bins = frame.size();
  dsp::ComplexFrame out(bins);
  for (size_t k = 0; k < bins; ++k) {
    const double pos = std::clamp(src[k], 0.0, static_cast<double>(bins - 1));
    const size_t i0 = static_cast<size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i0);
    if (frac == 0.0 || i0 + 1 >= bins) {
      out[k] = frame[i0];
    } else {
      out[k] = (1.0 - frac) * frame[i0] + frac * frame[i0 + 1];
    }
  }
  out.front().imag(0.0);
  out.back().imag(0.0);
  return out;
}

}  // namespace

dsp::ComplexFrame WarpSpectrum(std::span<const std::complex<double>> frame,
                               double alpha) {
  if (frame.size() < 2) Fail(ErrorKind::kArgument, "half-spectrum needs at least 2 bins");
  const int dft_size = static_cast<int>(2 * (frame.size() - 1));
  if ((dft_size & (dft_size - 1)) != 0) {
    Fail(ErrorKind::kArgument, "half-spectrum length must be K/2+1 for power-of-two K");
  }
  return ApplySourceBins(frame, WarpSourceBins(alpha, dft_size));
}

double SampleAlpha(Rng& rng, const WarpSpec& spec) {
  return rng.Uniform(spec.alpha_min, spec.alpha_max);
}

VtlpResult VtlpResynthesize(const dsp::Waveform& w, const WarpSpec& spec,
                            double alpha) {
  CheckAlpha(alpha);
  const dsp::StftConfig analysis = spec.Analysis();
  analysis.Validate(w.sample_rate);
  const size_t win = analysis.WindowSamples(w.sample_rate);

  VtlpResult result;
  result.alpha = alpha;
  if (w.size() < win) {
    result.waveform = w;
    result.passthrough = true;
    return result;
  }

  // Zero padding by one window on each side puts every original sample in
  // the fully overlapped region.
  dsp::Waveform padded;
  padded.sample_rate = w.sample_rate;
  padded.samples.assign(w.size() + 2 * win, 0.0);
  std::copy(w.samples.begin(), w.samples.end(), padded.samples.begin() + win);

  dsp::Spectrogram spec_frames = dsp::Stft(padded, analysis);
  const std::vector<double> src = WarpSourceBins(alpha, analysis.dft_size);
  for (auto& frame : spec_frames.frames) frame = ApplySourceBins(frame, src);
  dsp::Waveform resynth = dsp::Istft(spec_frames);

  result.waveform.sample_rate = w.sample_rate;
  result.waveform.samples.assign(resynth.samples.begin() + win,
                                 resynth.samples.begin() + win + w.size());
  return result;
}

VtlpResult VtlpResynthesize(const dsp::Waveform& w, const WarpSpec& spec,
                            Rng& rng) {
  return VtlpResynthesize(w, spec, SampleAlpha(rng, spec));
}

}  // namespace esf::vtlp
