// src/fusion.cc

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

#include "esf/fusion.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "esf/error.h"
#include "esf/random.h"

namespace esf::fusion {

using json = nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void CheckRow(const std::vector<double>& row, size_t vocab_size, const std::string& where) {
  if (row.size() != vocab_size) {
    Fail(ErrorKind::kScorerContract, where + " has " + std::to_string(row.size()) +
                                         " entries, expected " + std::to_string(vocab_size));
  }
}

}  // namespace

void FusionWeights::Validate() const {
  if (!(std::isfinite(lambda_p) && lambda_p >= 0.0) ||
      !(std::isfinite(lambda_lm) && lambda_lm >= 0.0)) {
    Fail(ErrorKind::kConfig, "fusion weights must be finite and non-negative");
  }
}

double LogSumExp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void CheckNormalized(std::span<const double> logp, size_t vocab_size, const char* who) {
  if (logp.size() != vocab_size) {
    Fail(ErrorKind::kScorerContract, std::string(who) + " returned " +
                                         std::to_string(logp.size()) + " scores for vocabulary " +
                                         std::to_string(vocab_size));
  }
  for (double v : logp) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      Fail(ErrorKind::kScorerContract, std::string(who) + " returned a NaN or +inf score");
    }
  }
  const double lse = LogSumExp(logp);
  if (!(std::abs(lse) <= kNormalizationTolerance)) {
    std::ostringstream os;
    os << who << " scores are not normalised (logsumexp = " << lse << ")";
    Fail(ErrorKind::kScorerContract, os.str());
  }
}

TableScorer::TableScorer(size_t vocab_size, std::map<std::string, std::vector<double>> table)
    : vocab_size_(vocab_size), table_(std::move(table)) {
  if (vocab_size_ == 0) Fail(ErrorKind::kArgument, "empty vocabulary");
  for (const auto& [key, row] : table_) CheckRow(row, vocab_size_, "table entry '" + key + "'");
}

std::string TableScorer::Key(const TokenSeq& prefix) {
  std::string key;
  for (size_t i = 1; i < prefix.size(); ++i) {
    if (i > 1) key += ' ';
    key += std::to_string(prefix[i]);
  }
  return key;
}

std::vector<double> TableScorer::Score(const TokenSeq& prefix) const {
  auto it = table_.find(Key(prefix));
  if (it == table_.end()) it = table_.find("*");
  if (it == table_.end()) {
    Fail(ErrorKind::kScorerContract, "no table entry for prefix '" + Key(prefix) + "'");
  }
  return it->second;
}

BigramScorer::BigramScorer(size_t vocab_size, std::map<int32_t, std::vector<double>> rows)
    : vocab_size_(vocab_size), rows_(std::move(rows)) {
  if (vocab_size_ == 0) Fail(ErrorKind::kArgument, "empty vocabulary");
  for (const auto& [prev, row] : rows_) CheckRow(row, vocab_size_, "bigram row " + std::to_string(prev));
}

std::vector<double> BigramScorer::Score(const TokenSeq& prefix) const {
  if (prefix.empty()) Fail(ErrorKind::kArgument, "prefix must start with sos");
  auto it = rows_.find(prefix.back());
  if (it == rows_.end()) {
    Fail(ErrorKind::kScorerContract, "no bigram row for token " + std::to_string(prefix.back()));
  }
  return it->second;
}

RandomScorer::RandomScorer(size_t vocab_size, uint64_t seed, double logit_scale)
    : vocab_size_(vocab_size), seed_(seed), logit_scale_(logit_scale) {
  if (vocab_size_ == 0) Fail(ErrorKind::kArgument, "empty vocabulary");
}

std::vector<double> RandomScorer::Score(const TokenSeq& prefix) const {
  Rng rng(HashBytes(prefix.data(), prefix.size() * sizeof(int32_t), seed_));
  std::vector<double> logits(vocab_size_);
  for (double& v : logits) v = logit_scale_ * rng.Gaussian();
  const double lse = LogSumExp(logits);
  for (double& v : logits) v -= lse;
  return logits;
}

std::unique_ptr<StepScorer> ParseScorer(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kFormat, std::string("scorer file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) Fail(ErrorKind::kFormat, "scorer file must hold a JSON object");
  std::string type = "table";
  json entries = doc;
  std::optional<size_t> vocab_size;
  if (doc.contains("entries")) {
    try {
      type = doc.value("type", "table");
      if (doc.contains("vocab_size")) vocab_size = doc.at("vocab_size").get<size_t>();
    } catch (const json::exception& e) {
      Fail(ErrorKind::kFormat, std::string("bad scorer header: ") + e.what());
    }
    entries = doc.at("entries");
  }
  if (!entries.is_object() || entries.empty()) Fail(ErrorKind::kFormat, "scorer has no entries");
  std::map<std::string, std::vector<double>> rows;
  for (auto it = entries.begin(); it != entries.end(); ++it) {
    try {
      rows[it.key()] = it.value().get<std::vector<double>>();
    } catch (const json::exception&) {
      Fail(ErrorKind::kFormat, "scorer entry '" + it.key() + "' is not a number array");
    }
  }
  const size_t V = vocab_size.value_or(rows.begin()->second.size());
  if (type == "table") return std::make_unique<TableScorer>(V, std::move(rows));
  if (type == "bigram") {
    std::map<int32_t, std::vector<double>> by_id;
    for (auto& [key, row] : rows) {
      char* end = nullptr;
      const long id = std::strtol(key.c_str(), &end, 10);
      if (key.empty() || *end != '\0') Fail(ErrorKind::kFormat, "bigram key '" + key + "' is not a token id");
      by_id[static_cast<int32_t>(id)] = std::move(row);
    }
    return std::make_unique<BigramScorer>(V, std::move(by_id));
  }
  Fail(ErrorKind::kFormat, "unknown scorer type '" + type + "'");
}

std::unique_ptr<StepScorer> LoadScorer(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open scorer file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseScorer(ss.str());
}

void PriorModel::Validate(bool normalized) const {
  if (log_prob.empty()) Fail(ErrorKind::kArgument, "empty prior");
  for (double v : log_prob) {
    if (!std::isfinite(v)) Fail(ErrorKind::kArgument, "prior has a non-finite entry");
  }
  if (normalized && !(std::abs(LogSumExp(log_prob)) <= kNormalizationTolerance)) {
    Fail(ErrorKind::kArgument, "prior is not normalised");
  }
}

PriorModel EstimatePrior(const std::vector<TokenSeq>& transcripts, size_t vocab_size,
                         double smoothing) {
  if (vocab_size == 0) Fail(ErrorKind::kArgument, "empty vocabulary");
  if (!(smoothing > 0.0) || !std::isfinite(smoothing)) {
    Fail(ErrorKind::kArgument, "smoothing must be a positive pseudo-count");
  }
  if (transcripts.empty()) Fail(ErrorKind::kArgument, "prior corpus is empty");
  std::vector<double> counts(vocab_size, 0.0);
  double total = 0.0;
  for (const auto& seq : transcripts) {
    for (int32_t id : seq) {
      if (id < 0 || static_cast<size_t>(id) >= vocab_size) {
        Fail(ErrorKind::kArgument, "token id " + std::to_string(id) + " outside the vocabulary");
      }
      counts[static_cast<size_t>(id)] += 1.0;
      total += 1.0;
    }
  }
  PriorModel prior;
  const double denom = total + smoothing * static_cast<double>(vocab_size);
  prior.log_prob.resize(vocab_size);
  for (size_t v = 0; v < vocab_size; ++v) {
    prior.log_prob[v] = std::log((counts[v] + smoothing) / denom);
  }
  return prior;
}

PriorModel UniformPrior(size_t vocab_size) {
  if (vocab_size == 0) Fail(ErrorKind::kArgument, "empty vocabulary");
  PriorModel prior;
  prior.log_prob.assign(vocab_size, -std::log(static_cast<double>(vocab_size)));
  return prior;
}

std::vector<double> FusedStep(std::span<const double> am_logp, std::span<const double> lm_logp,
                              const PriorModel& prior, const FusionWeights& w) {
  const size_t V = am_logp.size();
  if (w.lambda_p != 0.0 && prior.log_prob.size() != V) {
    Fail(ErrorKind::kArgument, "prior size " + std::to_string(prior.log_prob.size()) +
                                   " != acoustic size " + std::to_string(V));
  }
  if (w.lambda_lm != 0.0 && lm_logp.size() != V) {
    Fail(ErrorKind::kArgument, "language model size " + std::to_string(lm_logp.size()) +
                                   " != acoustic size " + std::to_string(V));
  }
  std::vector<double> out(am_logp.begin(), am_logp.end());
  for (size_t v = 0; v < V; ++v) {
    if (w.lambda_p != 0.0) out[v] -= w.lambda_p * prior.log_prob[v];
    if (w.lambda_lm != 0.0) out[v] += w.lambda_lm * lm_logp[v];
  }
  return out;
}

void SearchConfig::Validate() const {
  if (beam_size < 1) Fail(ErrorKind::kConfig, "beam_size must be >= 1");
  if (max_len < 1) Fail(ErrorKind::kConfig, "max_len must be >= 1");
  if (eos_id < 0) Fail(ErrorKind::kConfig, "eos id must be >= 0");
  if (sos_id == eos_id) Fail(ErrorKind::kConfig, "sos and eos must differ");
}

bool RanksBefore(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

namespace {

// Scores and validates both models for one prefix.
class StepEvaluator {
 public:
  StepEvaluator(const StepScorer& am, const StepScorer* lm, const PriorModel& prior,
                const FusionWeights& w, const SearchConfig& cfg)
      : am_(am), lm_(lm), prior_(prior), w_(w), vocab_(am.vocab_size()) {
    w.Validate();
    cfg.Validate();
    if (static_cast<size_t>(cfg.eos_id) >= vocab_) {
      Fail(ErrorKind::kConfig, "eos id lies outside the output vocabulary");
    }
    if (w.lambda_lm != 0.0) {
      if (!lm) Fail(ErrorKind::kArgument, "lambda_lm is non-zero but no language model was given");
      if (lm->vocab_size() != vocab_) Fail(ErrorKind::kArgument, "AM and LM vocabularies differ");
    }
    if (w.lambda_p != 0.0) {
      if (prior.vocab_size() != vocab_) Fail(ErrorKind::kArgument, "prior and AM vocabularies differ");
      prior.Validate(/*normalized=*/false);
    }
  }

  std::vector<double> operator()(const TokenSeq& prefix) const {
    const std::vector<double> am = am_.Score(prefix);
    CheckNormalized(am, vocab_, "acoustic model");
    std::vector<double> lm;
    if (w_.lambda_lm != 0.0) {
      lm = lm_->Score(prefix);
      CheckNormalized(lm, vocab_, "language model");
    }
    return FusedStep(am, lm, prior_, w_);
  }

  size_t vocab() const { return vocab_; }

 private:
  const StepScorer& am_;
  const StepScorer* lm_;
  const PriorModel& prior_;
  FusionWeights w_;
  size_t vocab_;
};

double RankScore(const Hypothesis& h, const SearchConfig& cfg) {
  if (!cfg.length_normalize) return h.score;
  return h.score / static_cast<double>(std::max<size_t>(1, h.tokens.size() - 1));
}

Hypothesis PickBest(const std::vector<Hypothesis>& hyps, const SearchConfig& cfg) {
  const Hypothesis* best = nullptr;
  for (const auto& h : hyps) {
    if (!best) {
      best = &h;
      continue;
    }
    const double a = RankScore(h, cfg), b = RankScore(*best, cfg);
    if (a > b || (a == b && h.tokens < best->tokens)) best = &h;
  }
  return *best;
}

}  // namespace

SearchResult BeamSearch(const StepScorer& am, const StepScorer* lm, const PriorModel& prior,
                        const FusionWeights& w, const SearchConfig& cfg) {
  StepEvaluator eval(am, lm, prior, w, cfg);
  SearchResult result;
  std::vector<Hypothesis> beam = {Hypothesis{{cfg.sos_id}, 0.0, false}};
  for (size_t step = 0; step < cfg.max_len && !beam.empty(); ++step) {
    std::vector<Hypothesis> live;
    for (const auto& hyp : beam) {
      const std::vector<double> fused = eval(hyp.tokens);
      ++result.expansions;
      for (size_t v = 0; v < eval.vocab(); ++v) {
        if (static_cast<int32_t>(v) == cfg.sos_id) continue;
        Hypothesis next{hyp.tokens, hyp.score + fused[v], false};
        next.tokens.push_back(static_cast<int32_t>(v));
        if (static_cast<int32_t>(v) == cfg.eos_id) {
          next.finished = true;
          result.finished.push_back(std::move(next));
        } else {
          live.push_back(std::move(next));
        }
      }
    }
    const size_t keep = std::min(cfg.beam_size, live.size());
    std::partial_sort(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(keep), live.end(),
                      RanksBefore);
    live.resize(keep);
    beam = std::move(live);
  }
  result.best = result.finished.empty() ? PickBest(beam, cfg) : PickBest(result.finished, cfg);
  return result;
}

SearchResult ExhaustiveSearch(const StepScorer& am, const StepScorer* lm, const PriorModel& prior,
                              const FusionWeights& w, const SearchConfig& cfg) {
  StepEvaluator eval(am, lm, prior, w, cfg);
  const double space = std::pow(static_cast<double>(eval.vocab()), static_cast<double>(cfg.max_len));
  if (space > kMaxExhaustiveSpace) {
    Fail(ErrorKind::kSize, "exhaustive search space V^L = " + std::to_string(space) +
                               " exceeds 1e6");
  }
  SearchResult result;
  std::vector<Hypothesis> frontier = {Hypothesis{{cfg.sos_id}, 0.0, false}};
  for (size_t step = 0; step < cfg.max_len; ++step) {
    std::vector<Hypothesis> next_frontier;
    for (const auto& hyp : frontier) {
      const std::vector<double> fused = eval(hyp.tokens);
      ++result.expansions;
      for (size_t v = 0; v < eval.vocab(); ++v) {
        if (static_cast<int32_t>(v) == cfg.sos_id) continue;
        Hypothesis next{hyp.tokens, hyp.score + fused[v], false};
        next.tokens.push_back(static_cast<int32_t>(v));
        if (static_cast<int32_t>(v) == cfg.eos_id) {
          next.finished = true;
          result.finished.push_back(std::move(next));
        } else {
          next_frontier.push_back(std::move(next));
        }
      }
    }
    frontier = std::move(next_frontier);
  }
  if (result.finished.empty() && frontier.empty()) {
    Fail(ErrorKind::kArgument, "vocabulary has no token other than sos");
  }
  result.best = result.finished.empty() ? PickBest(frontier, cfg) : PickBest(result.finished, cfg);
  return result;
}

}  // namespace esf::fusion
