// include/esf/fusion.h

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

#ifndef ESF_FUSION_H_
#define ESF_FUSION_H_

// Shallow-fusion decoding.  Each step adds
//
//   log P_am(y | x, y_<l) - lambda_p log P(y) + lambda_lm log P_lm(y | y_<l)
//
// to a hypothesis score; the best hypothesis maximises the sum over steps.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace esf::fusion {

using TokenSeq = std::vector<int32_t>;

inline constexpr double kNormalizationTolerance = 1e-6;

struct FusionWeights {
  double lambda_p = 0.0;
  double lambda_lm = 0.0;

  void Validate() const;
};

struct Hypothesis {
  TokenSeq tokens;  // starts with sos
  double score = 0.0;
  bool finished = false;
};

// Produces normalised next-token log-probabilities for a prefix.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual size_t vocab_size() const = 0;
  virtual std::vector<double> Score(const TokenSeq& prefix) const = 0;
};

double LogSumExp(std::span<const double> x);

// Throws kScorerContract unless `logp` has `vocab_size` entries and
// logsumexp(logp) is 0 within kNormalizationTolerance.
void CheckNormalized(std::span<const double> logp, size_t vocab_size, const char* who);

// Lookup table keyed by the prefix after sos, as space-separated ids ("" is
// the first step).  The optional "*" entry answers every other prefix.
class TableScorer : public StepScorer {
 public:
  TableScorer(size_t vocab_size, std::map<std::string, std::vector<double>> table);
  size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> Score(const TokenSeq& prefix) const override;

  static std::string Key(const TokenSeq& prefix);

 private:
  size_t vocab_size_;
  std::map<std::string, std::vector<double>> table_;
};

// Next-token distribution conditioned on the last token only; rows are keyed
// by that token id (sos for the first step).
class BigramScorer : public StepScorer {
 public:
  BigramScorer(size_t vocab_size, std::map<int32_t, std::vector<double>> rows);
  size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> Score(const TokenSeq& prefix) const override;

 private:
  size_t vocab_size_;
  std::map<int32_t, std::vector<double>> rows_;
};

// Deterministic pseudo-random distributions: log-softmax of Gaussian logits
// seeded by (seed, prefix).
class RandomScorer : public StepScorer {
 public:
  RandomScorer(size_t vocab_size, uint64_t seed, double logit_scale = 2.0);
  size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> Score(const TokenSeq& prefix) const override;

 private:
  size_t vocab_size_;
  uint64_t seed_;
  double logit_scale_;
};

// Scorer file: {"type": "table" | "bigram", "vocab_size": V, "entries": {...}}
// or, for a table, just the entries object.  Table keys are prefixes as
// above; bigram keys are previous-token ids.
std::unique_ptr<StepScorer> LoadScorer(const std::string& path);
std::unique_ptr<StepScorer> ParseScorer(const std::string& json_text);

struct PriorModel {
  std::vector<double> log_prob;

  size_t vocab_size() const { return log_prob.size(); }
  // Finite entries; with `normalized`, logsumexp = 0 as well.  The search
  // only needs finiteness, so a prior shifted by a constant is accepted.
  void Validate(bool normalized = true) const;
};

// log((count_v + s) / (N + s V)) over ids in [0, V).
PriorModel EstimatePrior(const std::vector<TokenSeq>& transcripts, size_t vocab_size,
                         double smoothing);
PriorModel UniformPrior(size_t vocab_size);

// am - lambda_p prior + lambda_lm lm, elementwise.  A term with weight 0 is
// left out, so -inf entries of an unused model do not produce NaN.
std::vector<double> FusedStep(std::span<const double> am_logp, std::span<const double> lm_logp,
                              const PriorModel& prior, const FusionWeights& w);

struct SearchConfig {
  size_t beam_size = 12;
  size_t max_len = 32;
  int32_t sos_id = 1;
  int32_t eos_id = 2;
  // Rank finished hypotheses by score / (number of emitted tokens).
  bool length_normalize = false;

  void Validate() const;
};

struct SearchResult {
  Hypothesis best;
  std::vector<Hypothesis> finished;
  size_t expansions = 0;
};

// True when `a` ranks before `b`: higher score, then lexicographically
// smaller tokens.
bool RanksBefore(const Hypothesis& a, const Hypothesis& b);

// Beam search over FusedStep scores.  Every step expands the live beam by
// every token except sos; candidates ending in eos join the finished pool and
// the best beam_size others stay live.  Finished hypotheses accrue nothing
// further.  Returns the best finished hypothesis, or the best live one at
// max_len when none finished.  `lm` may be null when lambda_lm is 0.
SearchResult BeamSearch(const StepScorer& am, const StepScorer* lm, const PriorModel& prior,
                        const FusionWeights& w, const SearchConfig& cfg);

inline constexpr double kMaxExhaustiveSpace = 1e6;

// Scores every sequence of at most max_len tokens (eos only last) the same
// way and returns the best under the same ranking.  Throws kSize when
// V^max_len exceeds 1e6.
SearchResult ExhaustiveSearch(const StepScorer& am, const StepScorer* lm, const PriorModel& prior,
                              const FusionWeights& w, const SearchConfig& cfg);

}  // namespace esf::fusion

#endif  // ESF_FUSION_H_
