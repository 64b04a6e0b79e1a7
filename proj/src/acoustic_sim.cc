// src/acoustic_sim.cc

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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "esf/error.h"

namespace esf::sim {

namespace {

constexpr double kPi = std::numbers::pi;

double Distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::string FormatDouble(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

void RoomSpec::Validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(dims[a] > 0.0)) Fail(ErrorKind::kConfig, "room dimensions must be positive");
    if (!(source[a] > 0.0 && source[a] < dims[a]) || !(mic[a] > 0.0 && mic[a] < dims[a])) {
      Fail(ErrorKind::kConfig, "source and microphone must lie strictly inside the room");
    }
  }
  if (!(target_t60 > 0.0)) Fail(ErrorKind::kConfig, "target T60 must be positive");
  if (max_image_order < 0) Fail(ErrorKind::kConfig, "max image order must be >= 0");
  if (!(speed_of_sound > 0.0)) Fail(ErrorKind::kConfig, "speed of sound must be positive");
}

double RoomSpec::Volume() const { return dims[0] * dims[1] * dims[2]; }

double RoomSpec::SurfaceArea() const {
  return 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
}

void SimulatorConfig::Validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(dims_min[a] > 0.0 && dims_min[a] <= dims_max[a])) {
      Fail(ErrorKind::kConfig, "room dimension ranges must be positive and ordered");
    }
    if (dims_min[a] <= 2.0 * wall_clearance) {
      Fail(ErrorKind::kConfig, "room dimension range too tight for the " +
                                   FormatDouble(wall_clearance) + " m wall clearance");
    }
  }
  if (!(t60_min > 0.0 && t60_min <= t60_max)) Fail(ErrorKind::kConfig, "t60 range must be positive and ordered");
  if (!(snr_min_db <= snr_max_db)) Fail(ErrorKind::kConfig, "snr range must be ordered");
  if (!(probability_of_reverb >= 0.0 && probability_of_reverb <= 1.0) ||
      !(probability_of_noise >= 0.0 && probability_of_noise <= 1.0)) {
    Fail(ErrorKind::kConfig, "probabilities must lie in [0, 1]");
  }
  if (max_image_order < 0) Fail(ErrorKind::kConfig, "max image order must be >= 0");
  if (wall_clearance < 0.0) Fail(ErrorKind::kConfig, "wall clearance must be >= 0");
}

RoomSpec SampleRoom(Rng& rng, const SimulatorConfig& cfg) {
  cfg.Validate();
  RoomSpec room;
  for (int a = 0; a < 3; ++a) room.dims[a] = rng.Uniform(cfg.dims_min[a], cfg.dims_max[a]);
  room.target_t60 = rng.Uniform(cfg.t60_min, cfg.t60_max);
  for (int a = 0; a < 3; ++a) {
    room.source[a] = rng.Uniform(cfg.wall_clearance, room.dims[a] - cfg.wall_clearance);
  }
  for (int a = 0; a < 3; ++a) {
    room.mic[a] = rng.Uniform(cfg.wall_clearance, room.dims[a] - cfg.wall_clearance);
  }
  room.max_image_order = cfg.max_image_order;
  room.absorption_model = cfg.absorption_model;
  return room;
}

double T60ToAbsorption(const RoomSpec& room) {
  if (!(room.target_t60 > 0.0)) Fail(ErrorKind::kConfig, "target T60 must be positive");
  const double a = 0.161 * room.Volume() / (room.SurfaceArea() * room.target_t60);
  return std::clamp(a, kMinAbsorption, 1.0);
}

namespace {

constexpr double kFitStartDb = -5.0;
constexpr double kFitEndDb = -25.0;

// Least-squares T60 over the kFitStartDb..kFitEndDb part of a decay curve
// sampled every `dt` seconds.
double FitDecayT60(std::span<const double> edc, double dt) {
  if (edc.empty() || !(edc[0] > 0.0)) {
    Fail(ErrorKind::kDegenerate, "impulse response has no energy");
  }
  double sum_t = 0, sum_d = 0, sum_tt = 0, sum_td = 0;
  size_t count = 0;
  for (size_t i = 0; i < edc.size(); ++i) {
    if (edc[i] <= 0.0) break;
    const double db = 10.0 * std::log10(edc[i] / edc[0]);
    if (db > kFitStartDb) continue;
    if (db < kFitEndDb) break;
    const double t = static_cast<double>(i) * dt;
    sum_t += t;
    sum_d += db;
    sum_tt += t * t;
    sum_td += t * db;
    ++count;
  }
  if (count < 2) Fail(ErrorKind::kDegenerate, "decay curve too short for a T60 estimate");
  const double n = static_cast<double>(count);
  const double slope = (n * sum_td - sum_t * sum_d) / (n * sum_tt - sum_t * sum_t);
  if (!(slope < 0.0)) Fail(ErrorKind::kDegenerate, "decay curve does not decay");
  return -60.0 / slope;
}

// T60 of the direction-averaged image decay for unit log-reflectance
// (energy factor e^-1 per reflection).  T60 scales as 1/g for other values.
double ShoeboxUnitT60(const RoomSpec& room) {
  // Fibonacci points on the upper hemisphere; the decay only depends on |u_i|.
  constexpr int kDirections = 2048;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<double> rates(kDirections);
  double mean_rate = 0.0;
  for (int i = 0; i < kDirections; ++i) {
    const double z = 1.0 - (i + 0.5) / kDirections;
    const double r = std::sqrt(1.0 - z * z);
    const double phi = i * golden;
    const double s = std::abs(r * std::cos(phi)) / room.dims[0] +
                     std::abs(r * std::sin(phi)) / room.dims[1] +
                     std::abs(z) / room.dims[2];
    rates[i] = room.speed_of_sound * s;
    mean_rate += rates[i] / kDirections;
  }
  // Closed-form Schroeder integral: sum_u exp(-a_u t) / a_u.
  const double dt = 1.0 / (200.0 * mean_rate);
  std::vector<double> edc;
  for (int step = 0;; ++step) {
    const double t = step * dt;
    double acc = 0.0;
    for (double a : rates) acc += std::exp(-a * t) / a;
    edc.push_back(acc);
    if (10.0 * std::log10(acc / edc[0]) < kFitEndDb - 1.0) break;
  }
  return FitDecayT60(edc, dt);
}

}  // namespace

double WallAbsorption(const RoomSpec& room) {
  if (room.absorption_model == AbsorptionModel::kSabine) return T60ToAbsorption(room);
  if (!(room.target_t60 > 0.0)) Fail(ErrorKind::kConfig, "target T60 must be positive");
  double log_reflectance;
  if (room.absorption_model == AbsorptionModel::kEyring) {
    log_reflectance = 0.161 * room.Volume() / (room.SurfaceArea() * room.target_t60);
  } else {
    log_reflectance = ShoeboxUnitT60(room) / room.target_t60;
  }
  return std::clamp(1.0 - std::exp(-log_reflectance), kMinAbsorption, 1.0);
}

double ReflectionCoefficient(const RoomSpec& room) {
  return std::sqrt(1.0 - WallAbsorption(room));
}

std::vector<ImageSource> EnumerateImages(const RoomSpec& room) {
  room.Validate();
  const int order = room.max_image_order;
  const double beta = ReflectionCoefficient(room);
  std::vector<ImageSource> images;
  // Image coordinate per axis: (1 - 2p) * src + 2 n L, reflecting |n - p| + |n|
  // times off that axis' two walls.
  for (int nx = -order; nx <= order; ++nx) {
    for (int px = 0; px <= 1; ++px) {
      const int rx = std::abs(nx - px) + std::abs(nx);
      if (rx > order) continue;
      for (int ny = -order; ny <= order; ++ny) {
        for (int py = 0; py <= 1; ++py) {
          const int ry = std::abs(ny - py) + std::abs(ny);
          if (rx + ry > order) continue;
          for (int nz = -order; nz <= order; ++nz) {
            for (int pz = 0; pz <= 1; ++pz) {
              const int rz = std::abs(nz - pz) + std::abs(nz);
              const int total = rx + ry + rz;
              if (total > order) continue;
              ImageSource img;
              img.position = {(1 - 2 * px) * room.source[0] + 2.0 * nx * room.dims[0],
                              (1 - 2 * py) * room.source[1] + 2.0 * ny * room.dims[1],
                              (1 - 2 * pz) * room.source[2] + 2.0 * nz * room.dims[2]};
              img.reflections = total;
              img.distance = Distance(img.position, room.mic);
              img.amplitude = (total == 0 ? 1.0 : std::pow(beta, total)) /
                              (4.0 * kPi * img.distance);
              images.push_back(img);
            }
          }
        }
      }
    }
  }
  return images;
}

double DirectPathDelay(const RoomSpec& room, int sample_rate) {
  return Distance(room.source, room.mic) / room.speed_of_sound * sample_rate;
}

ImpulseResponse ComputeRir(const RoomSpec& room, int sample_rate) {
  room.Validate();
  if (sample_rate <= 0) Fail(ErrorKind::kArgument, "sample rate must be positive");
  if (Distance(room.source, room.mic) < 1e-9) {
    Fail(ErrorKind::kGeometry, "source and microphone coincide");
  }
  std::vector<ImageSource> images = EnumerateImages(room);
  double max_delay = 0.0;
  for (const auto& img : images) {
    max_delay = std::max(max_delay, img.distance / room.speed_of_sound * sample_rate);
  }
  ImpulseResponse h;
  h.sample_rate = sample_rate;
  h.taps.assign(static_cast<size_t>(std::floor(max_delay)) + 2, 0.0);
  for (const auto& img : images) {
    if (img.amplitude == 0.0) continue;
    const double delay = img.distance / room.speed_of_sound * sample_rate;
    const size_t i0 = static_cast<size_t>(std::floor(delay));
    const double frac = delay - static_cast<double>(i0);
    h.taps[i0] += (1.0 - frac) * img.amplitude;
    if (frac > 0.0) h.taps[i0 + 1] += frac * img.amplitude;
  }
  return h;
}

namespace {

std::vector<double> ConvolveDirect(std::span<const double> x, std::span<const double> h,
                                   size_t out_len) {
  std::vector<double> y(out_len, 0.0);
  for (size_t n = 0; n < out_len; ++n) {
    double acc = 0.0;
    const size_t kmax = std::min(n + 1, h.size());
    for (size_t k = 0; k < kmax; ++k) {
      if (n - k < x.size()) acc += h[k] * x[n - k];
    }
    y[n] = acc;
  }
  return y;
}

std::vector<double> ConvolveFft(std::span<const double> x, std::span<const double> h,
                                size_t out_len) {
  size_t n = 1;
  while (n < x.size() + h.size() - 1) n <<= 1;
  dsp::ComplexFrame fx = dsp::ForwardRealDft(x, n);
  dsp::ComplexFrame fh = dsp::ForwardRealDft(h, n);
  for (size_t k = 0; k < fx.size(); ++k) fx[k] *= fh[k];
  std::vector<double> y = dsp::InverseRealDft(fx, n);
  y.resize(out_len);
  return y;
}

}  // namespace

dsp::Waveform ApplyRir(const dsp::Waveform& w, const ImpulseResponse& h) {
  if (w.sample_rate != h.sample_rate) {
    Fail(ErrorKind::kArgument, "sample rate mismatch between waveform (" +
                                   std::to_string(w.sample_rate) + ") and RIR (" +
                                   std::to_string(h.sample_rate) + ")");
  }
  dsp::Waveform out;
  out.sample_rate = w.sample_rate;
  if (w.samples.empty() || h.taps.empty()) {
    out.samples.assign(w.size(), 0.0);
    return out;
  }
  const double work = static_cast<double>(w.size()) * static_cast<double>(h.taps.size());
  out.samples = work < 1 << 16 ? ConvolveDirect(w.samples, h.taps, w.size())
                               : ConvolveFft(w.samples, h.taps, w.size());
  return out;
}

double EstimateT60(std::span<const double> taps, int sample_rate) {
  if (sample_rate <= 0) Fail(ErrorKind::kArgument, "sample rate must be positive");
  // Two cascaded 2nd-order Butterworth high-pass sections at 100 Hz.
  const double w0 = 2.0 * kPi * 100.0 / sample_rate;
  const double alpha = std::sin(w0) / (2.0 * std::sqrt(0.5));
  const double cosw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  const double b0 = (1.0 + cosw) / 2.0 / a0, b1 = -(1.0 + cosw) / a0, b2 = b0;
  const double a1 = -2.0 * cosw / a0, a2 = (1.0 - alpha) / a0;
  std::vector<double> x(taps.begin(), taps.end());
  for (int pass = 0; pass < 2; ++pass) {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
      const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }
  std::vector<double> edc(x.size() + 1, 0.0);
  for (size_t i = x.size(); i-- > 0;) edc[i] = edc[i + 1] + x[i] * x[i];
  edc.pop_back();
  return FitDecayT60(edc, 1.0 / sample_rate);
}

double MeanSquare(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

MixResult MixNoise(const dsp::Waveform& speech, const dsp::Waveform& noise,
                   double snr_db, size_t noise_offset) {
  MixResult result;
  result.waveform = speech;
  if (snr_db == kNoNoise) return result;
  if (std::isnan(snr_db)) Fail(ErrorKind::kArgument, "snr is NaN");
  if (noise.samples.empty()) Fail(ErrorKind::kDegenerate, "noise waveform is empty");
  if (noise.sample_rate != speech.sample_rate) {
    Fail(ErrorKind::kArgument, "sample rate mismatch between speech and noise");
  }
  const size_t n = speech.size();
  std::vector<double> segment(n);
  for (size_t i = 0; i < n; ++i) {
    segment[i] = noise.samples[(noise_offset + i) % noise.size()];
  }
  const double ps = MeanSquare(speech.samples);
  const double pn = MeanSquare(segment);
  if (!(pn > 0.0)) Fail(ErrorKind::kDegenerate, "noise has zero power");
  if (!(ps > 0.0)) Fail(ErrorKind::kDegenerate, "speech has zero power");
  const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  result.gain = gain;
  double peak = 0.0;
  for (size_t i = 0; i < n; ++i) {
    result.waveform.samples[i] = speech.samples[i] + gain * segment[i];
    peak = std::max(peak, std::abs(result.waveform.samples[i]));
  }
  if (peak > 1.0) {
    result.peak_protected = true;
    result.peak_scale = 1.0 / peak;
    for (double& v : result.waveform.samples) v *= result.peak_scale;
  }
  return result;
}

std::shared_ptr<const NoiseBank> NoiseBank::FromSource(const std::string& source) {
  auto bank = std::make_shared<NoiseBank>();
  if (source.rfind("synthetic:", 0) == 0) {
    if (source != "synthetic:white") {
      Fail(ErrorKind::kConfig, "unknown synthetic noise '" + source + "'");
    }
    bank->synthetic_ = true;
    return bank;
  }
  bank->synthetic_ = false;
  for (const auto& rec : recordio::ReadShard(source)) {
    dsp::Waveform w;
    w.sample_rate = static_cast<int>(rec.sample_rate);
    w.samples = recordio::PcmToFloat(rec.samples);
    if (MeanSquare(w.samples) > 0.0) bank->clips_.push_back(std::move(w));
  }
  if (bank->clips_.empty()) Fail(ErrorKind::kConfig, "noise shard has no usable clips: " + source);
  return bank;
}

dsp::Waveform NoiseBank::Draw(Rng& rng, size_t length, int sample_rate) const {
  if (synthetic_) {
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(std::max<size_t>(length, 1));
    for (double& v : w.samples) v = 0.1 * rng.Gaussian();
    return w;
  }
  const dsp::Waveform& clip = clips_[rng.Below(clips_.size())];
  if (clip.sample_rate != sample_rate) {
    Fail(ErrorKind::kArgument, "noise clip sample rate does not match the utterance");
  }
  return clip;
}

recordio::UtteranceRecord Simulate(const recordio::UtteranceRecord& utt, Rng& rng,
                                   const SimulatorConfig& cfg, const NoiseBank& noise,
                                   SimulationInfo* info) {
  cfg.Validate();
  SimulationInfo local;
  SimulationInfo& out_info = info ? *info : local;
  out_info = SimulationInfo{};

  // Both coin flips are always drawn so the random stream layout does not
  // depend on the probabilities.
  const bool reverb = rng.Uniform01() < cfg.probability_of_reverb;
  const bool add_noise = rng.Uniform01() < cfg.probability_of_noise;
  if (!reverb && !add_noise) return utt;

  recordio::UtteranceRecord result = utt;
  dsp::Waveform w;
  w.sample_rate = static_cast<int>(utt.sample_rate);
  w.samples = recordio::PcmToFloat(utt.samples);

  if (reverb) {
    RoomSpec room = SampleRoom(rng, cfg);
    ImpulseResponse h = ComputeRir(room, w.sample_rate);
    w = ApplyRir(w, h);
    out_info.reverberated = true;
    out_info.room = room;
    result.SetMeta(kMetaRoomDims, FormatDouble(room.dims[0]) + "x" +
                                      FormatDouble(room.dims[1]) + "x" +
                                      FormatDouble(room.dims[2]));
    result.SetMeta(kMetaRoomT60, FormatDouble(room.target_t60));
  }
  if (add_noise) {
    const double snr = rng.Uniform(cfg.snr_min_db, cfg.snr_max_db);
    dsp::Waveform n = noise.Draw(rng, w.size(), w.sample_rate);
    const size_t offset = rng.Below(n.size());
    MixResult mix = MixNoise(w, n, snr, offset);
    w = std::move(mix.waveform);
    out_info.noised = true;
    out_info.snr_db = snr;
    out_info.peak_scale = mix.peak_scale;
    result.SetMeta(kMetaSnr, FormatDouble(snr));
    if (mix.peak_protected) result.SetMeta(kMetaPeakScale, FormatDouble(mix.peak_scale));
  }
  result.samples = recordio::FloatToPcm(w.samples);
  return result;
}

recordio::UtteranceRecord Simulate(const recordio::UtteranceRecord& utt, Rng& rng,
                                   const SimulatorConfig& cfg) {
  auto bank = NoiseBank::FromSource(cfg.noise_source);
  return Simulate(utt, rng, cfg, *bank);
}

}  // namespace esf::sim
