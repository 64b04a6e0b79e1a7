// include/esf/pipeline.h

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

#ifndef ESF_PIPELINE_H_
#define ESF_PIPELINE_H_

// Streaming dataset combinators: interleaved shard reading, buffered shuffle,
// order-preserving parallel map and padded batching.  Every stage is a pull
// source; a pipeline has a single consumer.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "esf/acoustic_sim.h"
#include "esf/dsp.h"
#include "esf/error.h"
#include "esf/random.h"
#include "esf/recordio.h"
#include "esf/vtlp.h"

namespace esf::pipeline {

template <typename T>
class Source {
 public:
  virtual ~Source() = default;
  // nullopt marks the end of the stream.
  virtual std::optional<T> Next() = 0;
};

template <typename T>
using SourcePtr = std::unique_ptr<Source<T>>;

template <typename T>
class VectorSource : public Source<T> {
 public:
  explicit VectorSource(std::vector<T> items) : items_(std::move(items)) {}
  std::optional<T> Next() override {
    if (pos_ >= items_.size()) return std::nullopt;
    return std::move(items_[pos_++]);
  }

 private:
  std::vector<T> items_;
  size_t pos_ = 0;
};

template <typename T>
std::vector<T> Drain(Source<T>& source) {
  std::vector<T> out;
  while (auto item = source.Next()) out.push_back(std::move(*item));
  return out;
}

// Round-robin over `cycle_length` open inputs.  An exhausted input hands its
// slot to the next unopened one, which is read in the same turn.  Inputs are
// opened lazily, in order.
template <typename T>
class InterleaveSource : public Source<T> {
 public:
  using Opener = std::function<SourcePtr<T>()>;

  InterleaveSource(std::vector<Opener> inputs, size_t cycle_length)
      : inputs_(std::move(inputs)) {
    if (cycle_length < 1) Fail(ErrorKind::kConfig, "cycle_length must be >= 1");
    cycle_length_ = std::min(cycle_length, inputs_.size());
  }

  std::optional<T> Next() override {
    if (!started_) {
      started_ = true;
      while (slots_.size() < cycle_length_) slots_.push_back(inputs_[next_input_++]());
    }
    while (!slots_.empty()) {
      if (cursor_ >= slots_.size()) cursor_ = 0;
      std::optional<T> item = slots_[cursor_]->Next();
      if (item) {
        ++cursor_;
        return item;
      }
      if (next_input_ < inputs_.size()) {
        slots_[cursor_] = inputs_[next_input_++]();
      } else {
        slots_.erase(slots_.begin() + static_cast<std::ptrdiff_t>(cursor_));
      }
    }
    return std::nullopt;
  }

 private:
  std::vector<Opener> inputs_;
  size_t cycle_length_ = 1;
  size_t next_input_ = 0;
  size_t cursor_ = 0;
  bool started_ = false;
  std::vector<SourcePtr<T>> slots_;
};

// Fills a buffer of `buffer_size`, then repeatedly emits a uniformly chosen
// element and refills its slot from the input.
template <typename T>
class ShuffleSource : public Source<T> {
 public:
  ShuffleSource(SourcePtr<T> input, size_t buffer_size, uint64_t seed)
      : input_(std::move(input)), buffer_size_(buffer_size), rng_(seed) {
    if (buffer_size < 1) Fail(ErrorKind::kConfig, "shuffle buffer must be >= 1");
  }

  std::optional<T> Next() override {
    while (!input_done_ && buffer_.size() < buffer_size_) {
      std::optional<T> item = input_->Next();
      if (!item) {
        input_done_ = true;
        break;
      }
      buffer_.push_back(std::move(*item));
    }
    if (buffer_.empty()) return std::nullopt;
    const size_t pick = buffer_.size() == 1 ? 0 : rng_.Below(buffer_.size());
    T out = std::move(buffer_[pick]);
    std::optional<T> refill;
    if (!input_done_) {
      refill = input_->Next();
      if (!refill) input_done_ = true;
    }
    if (refill) {
      buffer_[pick] = std::move(*refill);
    } else {
      if (pick + 1 != buffer_.size()) buffer_[pick] = std::move(buffer_.back());
      buffer_.pop_back();
    }
    return out;
  }

 private:
  SourcePtr<T> input_;
  size_t buffer_size_;
  Rng rng_;
  bool input_done_ = false;
  std::vector<T> buffer_;
};

enum class MapFailurePolicy { kSkip, kFatal };

struct MapStats {
  std::atomic<uint64_t> processed{0};
  std::atomic<uint64_t> skipped{0};
};

// Applies `fn` to every element with up to `width` threads.  Elements are
// processed in chunks and emitted in input order, so the output does not
// depend on `width` as long as `fn` is a pure function of its argument.
template <typename T>
class MapSource : public Source<T> {
 public:
  using Fn = std::function<T(T)>;

  MapSource(SourcePtr<T> input, Fn fn, size_t width,
            MapFailurePolicy policy = MapFailurePolicy::kSkip,
            std::shared_ptr<MapStats> stats = nullptr)
      : input_(std::move(input)),
        fn_(std::move(fn)),
        width_(width),
        policy_(policy),
        stats_(stats ? std::move(stats) : std::make_shared<MapStats>()) {
    if (width < 1) Fail(ErrorKind::kConfig, "parallel_map_width must be >= 1");
  }

  std::optional<T> Next() override {
    while (pos_ >= ready_.size()) {
      if (input_done_) return std::nullopt;
      FillChunk();
    }
    return std::move(ready_[pos_++]);
  }

  const MapStats& stats() const { return *stats_; }

 private:
  void FillChunk() {
    std::vector<T> inputs;
    const size_t chunk = 4 * width_;
    while (inputs.size() < chunk) {
      std::optional<T> item = input_->Next();
      if (!item) {
        input_done_ = true;
        break;
      }
      inputs.push_back(std::move(*item));
    }
    std::vector<std::optional<T>> outputs(inputs.size());
    std::vector<std::exception_ptr> errors(inputs.size());
    auto work = [&](size_t begin) {
      for (size_t i = begin; i < inputs.size(); i += width_) {
        try {
          outputs[i] = fn_(std::move(inputs[i]));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const size_t threads = std::min(width_, inputs.size());
    if (threads <= 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }
    ready_.clear();
    pos_ = 0;
    for (size_t i = 0; i < outputs.size(); ++i) {
      if (errors[i]) {
        if (policy_ == MapFailurePolicy::kFatal) std::rethrow_exception(errors[i]);
        stats_->skipped.fetch_add(1);
        continue;
      }
      stats_->processed.fetch_add(1);
      ready_.push_back(std::move(*outputs[i]));
    }
  }

  SourcePtr<T> input_;
  Fn fn_;
  size_t width_;
  MapFailurePolicy policy_;
  std::shared_ptr<MapStats> stats_;
  bool input_done_ = false;
  std::vector<T> ready_;
  size_t pos_ = 0;
};

// Character-level symbol table.  Line i of the vocabulary file is the token
// with id i; a line holding a single space is the word separator.
class Tokenizer {
 public:
  static constexpr char kPad[] = "<pad>";
  static constexpr char kSos[] = "<s>";
  static constexpr char kEos[] = "</s>";
  static constexpr char kUnk[] = "<unk>";

  explicit Tokenizer(std::vector<std::string> tokens);
  static Tokenizer FromFile(const std::string& path);
  // Specials, space, a-z and apostrophe.
  static Tokenizer Default();

  void Save(const std::string& path) const;

  // One id per UTF-8 code point; out-of-vocabulary characters map to unk.
  std::vector<int32_t> Encode(std::string_view text) const;
  // Skips pad and sos, stops at eos.
  std::string Decode(const std::vector<int32_t>& ids) const;
  // Encode(text) followed by eos.
  std::vector<int32_t> Labels(std::string_view text) const;

  int32_t pad_id() const { return 0; }
  int32_t sos_id() const { return sos_; }
  int32_t eos_id() const { return eos_; }
  int32_t unk_id() const { return unk_; }
  size_t size() const { return tokens_.size(); }
  const std::string& token(int32_t id) const { return tokens_.at(static_cast<size_t>(id)); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> ids_;
  int32_t sos_ = -1, eos_ = -1, unk_ = -1;
};

// An utterance moving through the map stages.  `ordinal` is its position in
// the interleaved stream and, with the seed and epoch, fixes its
// augmentation randomness.
struct Example {
  uint64_t ordinal = 0;
  recordio::UtteranceRecord record;
  dsp::FeatureMatrix features;
  std::vector<int32_t> labels;
};

struct Batch {
  uint64_t sequence = 0;
  uint32_t batch_size = 0;
  uint32_t max_frames = 0;
  uint32_t feature_dim = 0;
  uint32_t max_labels = 0;
  std::vector<float> features;  // batch_size x max_frames x feature_dim
  std::vector<uint32_t> feature_lengths;
  std::vector<int32_t> labels;  // batch_size x max_labels, padded with 0
  std::vector<uint32_t> label_lengths;
  std::vector<std::string> utt_ids;

  float feature(size_t b, size_t t, size_t f) const {
    return features[(b * max_frames + t) * feature_dim + f];
  }
  int32_t label(size_t b, size_t l) const { return labels[b * max_labels + l]; }
  bool operator==(const Batch&) const = default;
};

// Groups consecutive examples; the last batch may be short.
class PaddedBatchSource : public Source<Batch> {
 public:
  PaddedBatchSource(SourcePtr<Example> input, size_t batch_size, float pad_value);
  std::optional<Batch> Next() override;

 private:
  SourcePtr<Example> input_;
  size_t batch_size_;
  float pad_value_;
  uint64_t sequence_ = 0;
};

Batch MakePaddedBatch(std::vector<Example>& examples, float pad_value,
                      uint64_t sequence = 0);

// Folds a batch into a running stream checksum.
uint64_t UpdateChecksum(uint64_t checksum, const Batch& batch);

struct PipelineConfig {
  std::vector<std::string> shard_paths;
  size_t interleave_cycle_length = 4;
  size_t shuffle_buffer = 64;
  size_t batch_size = 8;
  float pad_value = 0.0f;
  uint64_t seed = 0;
  uint64_t epoch = 0;
  size_t parallel_map_width = 1;
  // Empty selects Tokenizer::Default().
  std::string tokenizer;
  MapFailurePolicy map_failure = MapFailurePolicy::kSkip;

  void Validate() const;
};

struct AugmentConfig {
  bool enable_vtlp = true;
  bool enable_simulation = true;
  vtlp::WarpSpec warp;
  sim::SimulatorConfig simulator;
};

// Salts separating the random streams of the map stages.
inline constexpr uint64_t kVtlpSalt = 0x7674'6c70;
inline constexpr uint64_t kSimulateSalt = 0x7369'6d75;

uint64_t RecordSeed(uint64_t seed, uint64_t epoch, uint64_t ordinal, uint64_t salt);

struct PipelineStats {
  std::shared_ptr<MapStats> vtlp = std::make_shared<MapStats>();
  std::shared_ptr<MapStats> simulate = std::make_shared<MapStats>();
  std::shared_ptr<MapStats> features = std::make_shared<MapStats>();
  std::shared_ptr<MapStats> tokenize = std::make_shared<MapStats>();

  uint64_t skipped() const;
};

struct Pipeline {
  SourcePtr<Batch> batches;
  std::shared_ptr<PipelineStats> stats;
};

// Reads the shards in order, tagging records with their stream position.
SourcePtr<Example> InterleaveShards(const recordio::ShardSet& shards,
                                    size_t cycle_length);

// interleave -> shuffle -> vtlp -> simulate -> features -> tokenize ->
// padded batch.
Pipeline BuildPipeline(const PipelineConfig& cfg, const AugmentConfig& augment,
                       const dsp::FrontendConfig& frontend = {});

// Harmonic tone utterances with random lowercase transcripts.
struct SyntheticCorpusConfig {
  size_t num_utterances = 200;
  double min_seconds = 0.5;
  double max_seconds = 1.5;
  uint32_t sample_rate = 16000;
  uint64_t seed = 1;
};

std::vector<recordio::UtteranceRecord> SyntheticCorpus(const SyntheticCorpusConfig& cfg);

}  // namespace esf::pipeline

#endif  // ESF_PIPELINE_H_
