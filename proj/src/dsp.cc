// src/dsp.cc

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

#include "esf/dsp.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include "esf/bytes.h"
#include "esf/error.h"

namespace esf::dsp {

namespace {

// FFTW planning is not thread-safe; executing an existing plan on new arrays
// is.  Plans are created once per size and kept for the process lifetime.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const FftPlans& PlansFor(size_t n) {
  static std::mutex mu;
  static std::map<size_t, FftPlans> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> real(n);
  std::vector<fftw_complex> bins(n / 2 + 1);
  FftPlans p;
  const int size = static_cast<int>(n);
  p.forward = fftw_plan_dft_r2c_1d(size, real.data(), bins.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(size, bins.data(), real.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (p.forward == nullptr || p.inverse == nullptr) {
    Fail(ErrorKind::kConfig, "FFT planning failed for size " + std::to_string(n));
  }
  return plans.emplace(n, p).first->second;
}

bool IsPowerOfTwo(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

size_t StftConfig::WindowSamples(int sample_rate) const {
  return static_cast<size_t>(std::lround(window_ms * sample_rate / 1000.0));
}

size_t StftConfig::HopSamples(int sample_rate) const {
  return static_cast<size_t>(std::lround(hop_ms * sample_rate / 1000.0));
}

void StftConfig::Validate(int sample_rate) const {
  if (sample_rate <= 0) Fail(ErrorKind::kConfig, "sample rate must be positive");
  const size_t win = WindowSamples(sample_rate);
  const size_t hop = HopSamples(sample_rate);
  if (win == 0 || hop == 0) Fail(ErrorKind::kConfig, "window and hop must be non-empty");
  if (!IsPowerOfTwo(dft_size)) {
    Fail(ErrorKind::kConfig, "DFT size must be a power of two: " + std::to_string(dft_size));
  }
  if (static_cast<size_t>(dft_size) < win) {
    Fail(ErrorKind::kConfig, "DFT size " + std::to_string(dft_size) +
                                 " is smaller than the window (" + std::to_string(win) + ")");
  }
  if (hop > win) {
    Fail(ErrorKind::kConfig, "hop exceeds window length");
  }
}

std::vector<StftConfig> StftPresets() {
  return {
      StftConfig{25.0, 10.0, 512, WindowType::kHann},
      StftConfig{50.0, 12.5, 1024, WindowType::kHann},
      StftConfig{32.0, 16.0, 512, WindowType::kHann},
      StftConfig{32.0, 8.0, 512, WindowType::kHann},
  };
}

const char* FeatureKindName(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kMelEnergy: return "mel-energy";
    case FeatureKind::kPowerMel: return "power-mel";
    case FeatureKind::kMfcc: return "mfcc";
  }
  return "unknown";
}

std::vector<double> MakeWindow(WindowType type, size_t length) {
  std::vector<double> w(length);
  switch (type) {
    case WindowType::kHann:
      // Periodic form.
      for (size_t n = 0; n < length; ++n) {
        w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
      }
      break;
  }
  return w;
}

ComplexFrame ForwardRealDft(std::span<const double> input, size_t dft_size) {
  const FftPlans& plans = PlansFor(dft_size);
  std::vector<double> in(dft_size, 0.0);
  std::copy_n(input.begin(), std::min(input.size(), dft_size), in.begin());
  ComplexFrame out(dft_size / 2 + 1);
  fftw_execute_dft_r2c(plans.forward, in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> InverseRealDft(std::span<const std::complex<double>> bins,
                                   size_t dft_size) {
  if (bins.size() != dft_size / 2 + 1) {
    Fail(ErrorKind::kArgument, "inverse DFT expects K/2+1 bins");
  }
  const FftPlans& plans = PlansFor(dft_size);
  // c2r overwrites its input.
  ComplexFrame scratch(bins.begin(), bins.end());
  std::vector<double> out(dft_size);
  fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(scratch.data()),
                       out.data());
  const double scale = 1.0 / static_cast<double>(dft_size);
  for (double& v : out) v *= scale;
  return out;
}

Spectrogram Stft(const Waveform& w, const StftConfig& cfg) {
  cfg.Validate(w.sample_rate);
  const size_t win = cfg.WindowSamples(w.sample_rate);
  const size_t hop = cfg.HopSamples(w.sample_rate);
  if (w.size() < win) {
    Fail(ErrorKind::kEmptyInput, "waveform of " + std::to_string(w.size()) +
                                     " samples is shorter than one window (" +
                                     std::to_string(win) + ")");
  }
  const size_t num_frames = 1 + (w.size() - win) / hop;
  const std::vector<double> window = MakeWindow(cfg.window, win);
  const size_t k = static_cast<size_t>(cfg.dft_size);

  Spectrogram s;
  s.config = cfg;
  s.sample_rate = w.sample_rate;
  s.signal_length = (num_frames - 1) * hop + win;
  s.frames.reserve(num_frames);
  std::vector<double> frame(k, 0.0);
  for (size_t m = 0; m < num_frames; ++m) {
    const double* src = w.samples.data() + m * hop;
    for (size_t n = 0; n < win; ++n) frame[n] = src[n] * window[n];
    s.frames.push_back(ForwardRealDft(frame, k));
  }
  return s;
}

Waveform Istft(const Spectrogram& s) {
  const StftConfig& cfg = s.config;
  cfg.Validate(s.sample_rate);
  const size_t win = cfg.WindowSamples(s.sample_rate);
  const size_t hop = cfg.HopSamples(s.sample_rate);
  const size_t k = static_cast<size_t>(cfg.dft_size);
  const std::vector<double> window = MakeWindow(cfg.window, win);

  // The steady-state squared-window sum must not vanish anywhere, otherwise
  // some interior samples cannot be recovered.
  for (size_t n = 0; n < hop; ++n) {
    double acc = 0.0;
    for (size_t j = n; j < win; j += hop) acc += window[j] * window[j];
    if (acc < 1e-10) {
      Fail(ErrorKind::kConfig, "window/hop pair does not satisfy overlap-add reconstruction");
    }
  }

  Waveform out;
  out.sample_rate = s.sample_rate;
  if (s.frames.empty()) return out;
  const size_t length = (s.frames.size() - 1) * hop + win;
  out.samples.assign(length, 0.0);
  std::vector<double> norm(length, 0.0);
  for (size_t m = 0; m < s.frames.size(); ++m) {
    if (s.frames[m].size() != k / 2 + 1) {
      Fail(ErrorKind::kArgument, "spectrogram frame has wrong bin count");
    }
    std::vector<double> frame = InverseRealDft(s.frames[m], k);
    const size_t start = m * hop;
    for (size_t n = 0; n < win; ++n) {
      out.samples[start + n] += frame[n] * window[n];
      norm[start + n] += window[n] * window[n];
    }
  }
  for (size_t n = 0; n < length; ++n) {
    out.samples[n] = norm[n] > 1e-10 ? out.samples[n] / norm[n] : 0.0;
  }
  return out;
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> MelFilterbank(int num_filters, double fmin,
                                               double fmax, int sample_rate,
                                               int dft_size) {
  if (num_filters < 1) Fail(ErrorKind::kArgument, "num_filters must be >= 1");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    Fail(ErrorKind::kArgument, "invalid mel band edges: need 0 <= fmin < fmax <= fs/2");
  }
  const double mel_lo = HzToMel(fmin);
  const double mel_hi = HzToMel(fmax);
  std::vector<double> edges(num_filters + 2);
  for (int i = 0; i < num_filters + 2; ++i) {
    edges[i] = MelToHz(mel_lo + (mel_hi - mel_lo) * i / (num_filters + 1));
  }
  const size_t bins = static_cast<size_t>(dft_size) / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / dft_size;
  std::vector<std::vector<double>> bank(num_filters, std::vector<double>(bins, 0.0));
  for (int j = 0; j < num_filters; ++j) {
    const double left = edges[j], center = edges[j + 1], right = edges[j + 2];
    for (size_t b = 0; b < bins; ++b) {
      const double f = b * bin_hz;
      double weight = 0.0;
      if (f > left && f <= center) {
        weight = (f - left) / (center - left);
      } else if (f > center && f < right) {
        weight = (right - f) / (right - center);
      }
      bank[j][b] = weight;
    }
  }
  return bank;
}

FeatureMatrix MelEnergies(const Spectrogram& s, int num_filters, double fmin,
                          double fmax) {
  const auto bank =
      MelFilterbank(num_filters, fmin, fmax, s.sample_rate, s.config.dft_size);
  FeatureMatrix out;
  out.kind = FeatureKind::kMelEnergy;
  out.num_frames = s.num_frames();
  out.num_coeffs = static_cast<size_t>(num_filters);
  out.values.assign(out.num_frames * out.num_coeffs, 0.0);
  std::vector<double> power(s.num_bins());
  for (size_t m = 0; m < s.num_frames(); ++m) {
    for (size_t b = 0; b < power.size(); ++b) power[b] = std::norm(s.frames[m][b]);
    for (int j = 0; j < num_filters; ++j) {
      double acc = 0.0;
      for (size_t b = 0; b < power.size(); ++b) acc += bank[j][b] * power[b];
      out.at(m, j) = acc;
    }
  }
  return out;
}

FeatureMatrix PowerMelFeatures(const FeatureMatrix& mel_energies) {
  FeatureMatrix out = mel_energies;
  out.kind = FeatureKind::kPowerMel;
  for (double& v : out.values) {
    if (!(v >= 0.0)) {
      Fail(ErrorKind::kDomain, "power-mel input must be non-negative, got " + std::to_string(v));
    }
    v = std::pow(v, kPowerMelExponent);
  }
  return out;
}

FeatureMatrix Mfcc(const FeatureMatrix& mel_energies, int num_ceps) {
  const size_t filters = mel_energies.num_coeffs;
  if (num_ceps < 1 || static_cast<size_t>(num_ceps) > filters) {
    Fail(ErrorKind::kArgument, "num_ceps must be in [1, num_filters]");
  }
  FeatureMatrix out;
  out.kind = FeatureKind::kMfcc;
  out.num_frames = mel_energies.num_frames;
  out.num_coeffs = static_cast<size_t>(num_ceps);
  out.values.assign(out.num_frames * out.num_coeffs, 0.0);

  std::vector<std::vector<double>> basis(num_ceps, std::vector<double>(filters));
  for (int c = 0; c < num_ceps; ++c) {
    const double scale = c == 0 ? std::sqrt(1.0 / filters) : std::sqrt(2.0 / filters);
    for (size_t j = 0; j < filters; ++j) {
      basis[c][j] = scale * std::cos(std::numbers::pi * c * (j + 0.5) / filters);
    }
  }
  std::vector<double> logs(filters);
  for (size_t m = 0; m < out.num_frames; ++m) {
    for (size_t j = 0; j < filters; ++j) {
      logs[j] = std::log(std::max(mel_energies.at(m, j), kMfccLogFloor));
    }
    for (int c = 0; c < num_ceps; ++c) {
      double acc = 0.0;
      for (size_t j = 0; j < filters; ++j) acc += basis[c][j] * logs[j];
      out.at(m, c) = acc;
    }
  }
  return out;
}

FeatureMatrix ComputeFeatures(const Waveform& w, const FrontendConfig& cfg) {
  Spectrogram s = Stft(w, cfg.stft);
  FeatureMatrix mel = MelEnergies(s, cfg.num_filters, cfg.fmin, cfg.fmax);
  switch (cfg.kind) {
    case FeatureKind::kMelEnergy: return mel;
    case FeatureKind::kPowerMel: return PowerMelFeatures(mel);
    case FeatureKind::kMfcc: return Mfcc(mel, cfg.num_ceps);
  }
  return mel;
}

std::string FeaturesToCsv(const FeatureMatrix& features) {
  std::ostringstream os;
  os.precision(9);
  for (size_t m = 0; m < features.num_frames; ++m) {
    for (size_t c = 0; c < features.num_coeffs; ++c) {
      if (c) os << ',';
      os << features.at(m, c);
    }
    os << '\n';
  }
  return os.str();
}

Waveform ReadWav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open wav: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(data);
  try {
    if (r.Bytes(4) != "RIFF") Fail(ErrorKind::kFormat, "not a RIFF file: " + path);
    r.U32();
    if (r.Bytes(4) != "WAVE") Fail(ErrorKind::kFormat, "not a WAVE file: " + path);
    Waveform w;
    bool have_fmt = false;
    while (!r.done()) {
      std::string_view id = r.Bytes(4);
      uint32_t size = r.U32();
      if (id == "fmt ") {
        ByteReader f(r.Bytes(size));
        uint16_t format = static_cast<uint16_t>(f.U8() | (f.U8() << 8));
        uint16_t channels = static_cast<uint16_t>(f.U8() | (f.U8() << 8));
        w.sample_rate = static_cast<int>(f.U32());
        f.U32();
        f.U8();
        f.U8();
        uint16_t bits = static_cast<uint16_t>(f.U8() | (f.U8() << 8));
        if (format != 1 || channels != 1 || bits != 16) {
          Fail(ErrorKind::kFormat, "only 16-bit PCM mono wav is supported: " + path);
        }
        have_fmt = true;
      } else if (id == "data") {
        if (!have_fmt) Fail(ErrorKind::kFormat, "data chunk before fmt chunk: " + path);
        std::string_view bytes = r.Bytes(std::min<size_t>(size, r.remaining()));
        w.samples.resize(bytes.size() / 2);
        for (size_t i = 0; i < w.samples.size(); ++i) {
          auto lo = static_cast<uint8_t>(bytes[2 * i]);
          auto hi = static_cast<uint8_t>(bytes[2 * i + 1]);
          w.samples[i] = static_cast<int16_t>(static_cast<uint16_t>(lo | (hi << 8))) / 32768.0;
        }
        return w;
      } else {
        r.Bytes(std::min<size_t>(size + (size & 1), r.remaining()));
      }
    }
    Fail(ErrorKind::kFormat, "no data chunk in " + path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kTruncation) Fail(ErrorKind::kFormat, "truncated wav: " + path);
    throw;
  }
}

void WriteWav(const std::string& path, const Waveform& w) {
  std::string out;
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  out += "RIFF";
  PutU32(&out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(&out, 16);
  PutU8(&out, 1);
  PutU8(&out, 0);
  PutU8(&out, 1);
  PutU8(&out, 0);
  PutU32(&out, static_cast<uint32_t>(w.sample_rate));
  PutU32(&out, static_cast<uint32_t>(w.sample_rate) * 2);
  PutU8(&out, 2);
  PutU8(&out, 0);
  PutU8(&out, 16);
  PutU8(&out, 0);
  out += "data";
  PutU32(&out, data_bytes);
  for (double x : w.samples) {
    double v = std::clamp(std::nearbyint(x * 32768.0), -32768.0, 32767.0);
    auto u = static_cast<uint16_t>(static_cast<int16_t>(v));
    PutU8(&out, static_cast<uint8_t>(u & 0xFF));
    PutU8(&out, static_cast<uint8_t>(u >> 8));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) Fail(ErrorKind::kIo, "cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) Fail(ErrorKind::kIo, "write failed: " + path);
}

}  // namespace esf::dsp
