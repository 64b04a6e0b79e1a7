// src/pipeline.cc

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

#include "esf/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace esf::pipeline {

namespace {

// Length of the UTF-8 sequence starting with `lead`; invalid leads count as 1.
size_t Utf8Length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

class ShardExampleSource : public Source<Example> {
 public:
  ShardExampleSource(const std::string& path, std::shared_ptr<uint64_t> counter)
      : counter_(std::move(counter)) {
    try {
      reader_.emplace(path);
    } catch (const Error& e) {
      Rethrow(path, e);
    }
  }

  std::optional<Example> Next() override {
    std::optional<recordio::UtteranceRecord> rec;
    try {
      rec = reader_->Next();
    } catch (const Error& e) {
      Rethrow(reader_->path(), e);
    }
    if (!rec) return std::nullopt;
    Example ex;
    ex.ordinal = (*counter_)++;
    ex.record = std::move(*rec);
    return ex;
  }

 private:
  [[noreturn]] static void Rethrow(const std::string& path, const Error& e) {
    std::string msg = e.message();
    if (msg.find(path) == std::string::npos) msg = path + ": " + msg;
    throw Error(e.kind(), msg, e.offset());
  }

  std::optional<recordio::ShardReader> reader_;
  std::shared_ptr<uint64_t> counter_;
};

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_[0] != kPad) {
    Fail(ErrorKind::kConfig, std::string("vocabulary must start with ") + kPad);
  }
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) Fail(ErrorKind::kConfig, "empty token at line " + std::to_string(i + 1));
    if (!ids_.emplace(tokens_[i], static_cast<int32_t>(i)).second) {
      Fail(ErrorKind::kConfig, "duplicate token '" + tokens_[i] + "'");
    }
  }
  auto need = [&](const char* name) {
    auto it = ids_.find(name);
    if (it == ids_.end()) Fail(ErrorKind::kConfig, std::string("vocabulary lacks ") + name);
    return it->second;
  };
  sos_ = need(kSos);
  eos_ = need(kEos);
  unk_ = need(kUnk);
}

Tokenizer Tokenizer::FromFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  // A trailing empty line is just the final newline.
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Tokenizer(std::move(tokens));
}

Tokenizer Tokenizer::Default() {
  std::vector<std::string> tokens = {kPad, kSos, kEos, kUnk, " "};
  for (char c = 'a'; c <= 'z'; ++c) tokens.emplace_back(1, c);
  tokens.emplace_back("'");
  return Tokenizer(std::move(tokens));
}

void Tokenizer::Save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write vocabulary: " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path);
}

std::vector<int32_t> Tokenizer::Encode(std::string_view text) const {
  std::vector<int32_t> ids;
  size_t i = 0;
  while (i < text.size()) {
    const size_t n = std::min(Utf8Length(static_cast<unsigned char>(text[i])), text.size() - i);
    auto it = ids_.find(std::string(text.substr(i, n)));
    ids.push_back(it == ids_.end() ? unk_ : it->second);
    i += n;
  }
  return ids;
}

std::string Tokenizer::Decode(const std::vector<int32_t>& ids) const {
  std::string text;
  for (int32_t id : ids) {
    if (id == eos_) break;
    if (id == pad_id() || id == sos_) continue;
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
      Fail(ErrorKind::kArgument, "token id out of range: " + std::to_string(id));
    }
    text += tokens_[static_cast<size_t>(id)];
  }
  return text;
}

std::vector<int32_t> Tokenizer::Labels(std::string_view text) const {
  std::vector<int32_t> ids = Encode(text);
  ids.push_back(eos_);
  return ids;
}

Batch MakePaddedBatch(std::vector<Example>& examples, float pad_value,
                      uint64_t sequence) {
  Batch b;
  b.sequence = sequence;
  b.batch_size = static_cast<uint32_t>(examples.size());
  for (const auto& ex : examples) {
    if (b.feature_dim == 0) b.feature_dim = static_cast<uint32_t>(ex.features.num_coeffs);
    if (ex.features.num_frames > 0 && ex.features.num_coeffs != b.feature_dim) {
      Fail(ErrorKind::kArgument, "feature dimension differs within a batch at " + ex.record.utt_id);
    }
    b.max_frames = std::max(b.max_frames, static_cast<uint32_t>(ex.features.num_frames));
    b.max_labels = std::max(b.max_labels, static_cast<uint32_t>(ex.labels.size()));
  }
  const size_t row = static_cast<size_t>(b.max_frames) * b.feature_dim;
  b.features.assign(examples.size() * row, pad_value);
  b.labels.assign(examples.size() * b.max_labels, 0);
  for (size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = examples[i];
    std::transform(ex.features.values.begin(), ex.features.values.end(),
                   b.features.begin() + static_cast<std::ptrdiff_t>(i * row),
                   [](double v) { return static_cast<float>(v); });
    std::copy(ex.labels.begin(), ex.labels.end(),
              b.labels.begin() + static_cast<std::ptrdiff_t>(i * b.max_labels));
    b.feature_lengths.push_back(static_cast<uint32_t>(ex.features.num_frames));
    b.label_lengths.push_back(static_cast<uint32_t>(ex.labels.size()));
    b.utt_ids.push_back(ex.record.utt_id);
  }
  return b;
}

PaddedBatchSource::PaddedBatchSource(SourcePtr<Example> input, size_t batch_size,
                                     float pad_value)
    : input_(std::move(input)), batch_size_(batch_size), pad_value_(pad_value) {
  if (batch_size < 1) Fail(ErrorKind::kConfig, "batch_size must be >= 1");
}

std::optional<Batch> PaddedBatchSource::Next() {
  std::vector<Example> group;
  while (group.size() < batch_size_) {
    std::optional<Example> ex = input_->Next();
    if (!ex) break;
    group.push_back(std::move(*ex));
  }
  if (group.empty()) return std::nullopt;
  return MakePaddedBatch(group, pad_value_, sequence_++);
}

uint64_t UpdateChecksum(uint64_t checksum, const Batch& batch) {
  uint64_t h = checksum;
  auto mix = [&h](const void* p, size_t n) { h = HashBytes(p, n, h); };
  const uint32_t dims[4] = {batch.batch_size, batch.max_frames, batch.feature_dim,
                            batch.max_labels};
  mix(dims, sizeof(dims));
  mix(batch.features.data(), batch.features.size() * sizeof(float));
  mix(batch.feature_lengths.data(), batch.feature_lengths.size() * sizeof(uint32_t));
  mix(batch.labels.data(), batch.labels.size() * sizeof(int32_t));
  mix(batch.label_lengths.data(), batch.label_lengths.size() * sizeof(uint32_t));
  for (const auto& id : batch.utt_ids) mix(id.data(), id.size() + 1);
  return h;
}

void PipelineConfig::Validate() const {
  if (shard_paths.empty()) Fail(ErrorKind::kConfig, "pipeline has no shards");
  if (interleave_cycle_length < 1) Fail(ErrorKind::kConfig, "interleave_cycle_length must be >= 1");
  if (shuffle_buffer < 1) Fail(ErrorKind::kConfig, "shuffle_buffer must be >= 1");
  if (batch_size < 1) Fail(ErrorKind::kConfig, "batch_size must be >= 1");
  if (parallel_map_width < 1) Fail(ErrorKind::kConfig, "parallel_map_width must be >= 1");
}

uint64_t RecordSeed(uint64_t seed, uint64_t epoch, uint64_t ordinal, uint64_t salt) {
  return Hash64(Hash64(seed, epoch, ordinal), salt);
}

uint64_t PipelineStats::skipped() const {
  return vtlp->skipped + simulate->skipped + features->skipped + tokenize->skipped;
}

SourcePtr<Example> InterleaveShards(const recordio::ShardSet& shards,
                                    size_t cycle_length) {
  auto counter = std::make_shared<uint64_t>(0);
  std::vector<InterleaveSource<Example>::Opener> openers;
  for (const auto& path : shards.shard_paths) {
    openers.push_back([path, counter]() -> SourcePtr<Example> {
      return std::make_unique<ShardExampleSource>(path, counter);
    });
  }
  return std::make_unique<InterleaveSource<Example>>(std::move(openers), cycle_length);
}

Pipeline BuildPipeline(const PipelineConfig& cfg, const AugmentConfig& augment,
                       const dsp::FrontendConfig& frontend) {
  cfg.Validate();
  if (augment.enable_vtlp) augment.warp.Validate();
  if (augment.enable_simulation) augment.simulator.Validate();
  auto tokenizer = std::make_shared<const Tokenizer>(
      cfg.tokenizer.empty() ? Tokenizer::Default() : Tokenizer::FromFile(cfg.tokenizer));

  Pipeline p;
  p.stats = std::make_shared<PipelineStats>();
  const size_t width = cfg.parallel_map_width;
  const uint64_t seed = cfg.seed, epoch = cfg.epoch;

  SourcePtr<Example> stream =
      InterleaveShards(recordio::ShardSet{cfg.shard_paths}, cfg.interleave_cycle_length);
  stream = std::make_unique<ShuffleSource<Example>>(std::move(stream), cfg.shuffle_buffer,
                                                    Hash64(seed, epoch));

  if (augment.enable_vtlp) {
    const vtlp::WarpSpec warp = augment.warp;
    stream = std::make_unique<MapSource<Example>>(
        std::move(stream),
        [warp, seed, epoch](Example ex) {
          Rng rng(RecordSeed(seed, epoch, ex.ordinal, kVtlpSalt));
          dsp::Waveform w{recordio::PcmToFloat(ex.record.samples),
                          static_cast<int>(ex.record.sample_rate)};
          vtlp::VtlpResult r = vtlp::VtlpResynthesize(w, warp, rng);
          ex.record.samples = recordio::FloatToPcm(r.waveform.samples);
          return ex;
        },
        width, cfg.map_failure, p.stats->vtlp);
  }
  if (augment.enable_simulation) {
    const sim::SimulatorConfig sim_cfg = augment.simulator;
    std::shared_ptr<const sim::NoiseBank> bank = sim::NoiseBank::FromSource(sim_cfg.noise_source);
    stream = std::make_unique<MapSource<Example>>(
        std::move(stream),
        [sim_cfg, bank, seed, epoch](Example ex) {
          Rng rng(RecordSeed(seed, epoch, ex.ordinal, kSimulateSalt));
          ex.record = sim::Simulate(ex.record, rng, sim_cfg, *bank);
          return ex;
        },
        width, cfg.map_failure, p.stats->simulate);
  }
  stream = std::make_unique<MapSource<Example>>(
      std::move(stream),
      [frontend](Example ex) {
        dsp::Waveform w{recordio::PcmToFloat(ex.record.samples),
                        static_cast<int>(ex.record.sample_rate)};
        ex.features = dsp::ComputeFeatures(w, frontend);
        ex.record.samples.clear();
        ex.record.samples.shrink_to_fit();
        return ex;
      },
      width, cfg.map_failure, p.stats->features);
  stream = std::make_unique<MapSource<Example>>(
      std::move(stream),
      [tokenizer](Example ex) {
        ex.labels = tokenizer->Labels(ex.record.transcript);
        return ex;
      },
      width, cfg.map_failure, p.stats->tokenize);

  p.batches = std::make_unique<PaddedBatchSource>(std::move(stream), cfg.batch_size,
                                                  cfg.pad_value);
  return p;
}

std::vector<recordio::UtteranceRecord> SyntheticCorpus(const SyntheticCorpusConfig& cfg) {
  if (!(cfg.min_seconds > 0.0 && cfg.min_seconds <= cfg.max_seconds)) {
    Fail(ErrorKind::kConfig, "utterance duration range must be positive and ordered");
  }
  if (cfg.sample_rate == 0) Fail(ErrorKind::kConfig, "sample rate must be positive");
  static const char* const kWords[] = {
      "the", "a", "speech", "data", "room", "noise", "model", "train", "voice", "signal",
      "clean", "far", "field", "batch", "server", "shard", "echo", "sound", "word", "time"};
  Rng rng(cfg.seed);
  std::vector<recordio::UtteranceRecord> corpus;
  corpus.reserve(cfg.num_utterances);
  const double fs = cfg.sample_rate;
  for (size_t i = 0; i < cfg.num_utterances; ++i) {
    recordio::UtteranceRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "utt-%06zu", i);
    rec.utt_id = id;
    rec.sample_rate = cfg.sample_rate;
    const double seconds = rng.Uniform(cfg.min_seconds, cfg.max_seconds);
    const size_t n = static_cast<size_t>(std::round(seconds * fs));
    const double f0 = rng.Uniform(100.0, 300.0);
    const int harmonics = 3 + static_cast<int>(rng.Below(4));
    std::vector<double> amp(harmonics), phase(harmonics);
    for (int h = 0; h < harmonics; ++h) {
      amp[h] = 0.3 / (h + 1) * rng.Uniform(0.5, 1.0);
      phase[h] = rng.Uniform(0.0, 2.0 * std::numbers::pi);
    }
    std::vector<double> x(n);
    for (size_t t = 0; t < n; ++t) {
      // Raised-cosine fade in and out over 10 ms.
      const double edge = std::min<double>({1.0, t / (0.01 * fs), (n - 1 - t) / (0.01 * fs)});
      const double env = 0.5 - 0.5 * std::cos(std::numbers::pi * std::clamp(edge, 0.0, 1.0));
      double v = 0.0;
      for (int h = 0; h < harmonics; ++h) {
        const double f = f0 * (h + 1);
        if (f >= fs / 2) break;
        v += amp[h] * std::sin(2.0 * std::numbers::pi * f * t / fs + phase[h]);
      }
      x[t] = env * v + 0.001 * rng.Gaussian();
    }
    rec.samples = recordio::FloatToPcm(x);
    const int words = 1 + static_cast<int>(rng.Below(5));
    for (int w = 0; w < words; ++w) {
      if (w) rec.transcript += ' ';
      rec.transcript += kWords[rng.Below(std::size(kWords))];
    }
    rec.SetMeta("synthetic.f0", std::to_string(f0));
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace esf::pipeline
