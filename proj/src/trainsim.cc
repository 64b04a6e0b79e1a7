// src/trainsim.cc

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

#include "esf/trainsim.h"

#include <unistd.h>

#include <algorithm>
#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "esf/exserver.h"

namespace esf::trainsim {

using Clock = std::chrono::steady_clock;

double TSession(double session_time, double elapsed_time) {
  if (!(elapsed_time > 0.0)) return 0.0;
  return std::clamp(session_time / elapsed_time, 0.0, 1.0);
}

ThroughputStats ConsumeEpoch(pipeline::Source<pipeline::Batch>& stream, double step_cost_s) {
  if (!(step_cost_s >= 0.0)) Fail(ErrorKind::kArgument, "step_cost must be >= 0");
  ThroughputStats stats;
  const auto start = Clock::now();
  const auto cost = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(step_cost_s));
  while (true) {
    std::optional<pipeline::Batch> batch;
    try {
      batch = stream.Next();
    } catch (const Error& e) {
      stats.complete = false;
      stats.error = e.what();
      break;
    }
    if (!batch) break;
    if (stats.batches == 0) {
      stats.first_batch_latency = std::chrono::duration<double>(Clock::now() - start).count();
    }
    ++stats.batches;
    stats.utterances += batch->batch_size;
    if (step_cost_s > 0.0) {
      const auto step_start = Clock::now();
      std::this_thread::sleep_until(step_start + cost);
      stats.session_time += std::chrono::duration<double>(Clock::now() - step_start).count();
    }
  }
  stats.elapsed_time = std::chrono::duration<double>(Clock::now() - start).count();
  stats.epoch_time = stats.elapsed_time;
  stats.t_session = TSession(stats.session_time, stats.elapsed_time);
  return stats;
}

double ComputeBoundTSession(uint64_t batches, double step_cost_s, double first_batch_latency_s) {
  const double busy = static_cast<double>(batches) * step_cost_s;
  return TSession(busy, busy + first_batch_latency_s);
}

std::vector<double> DirectSum(const std::vector<std::vector<double>>& inputs) {
  if (inputs.empty()) Fail(ErrorKind::kArgument, "allreduce needs at least one worker");
  std::vector<double> sum = inputs[0];
  for (size_t w = 1; w < inputs.size(); ++w) {
    if (inputs[w].size() != sum.size()) {
      Fail(ErrorKind::kArgument, "worker " + std::to_string(w) + " vector length " +
                                     std::to_string(inputs[w].size()) + " != " +
                                     std::to_string(sum.size()));
    }
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += inputs[w][i];
  }
  return sum;
}

std::vector<std::vector<double>> RingAllreduce(const std::vector<std::vector<double>>& inputs,
                                               size_t ring_start) {
  const size_t W = inputs.size();
  if (W == 0) Fail(ErrorKind::kArgument, "allreduce needs at least one worker");
  const size_t n = inputs[0].size();
  for (size_t w = 1; w < W; ++w) {
    if (inputs[w].size() != n) {
      Fail(ErrorKind::kArgument, "worker " + std::to_string(w) + " vector length " +
                                     std::to_string(inputs[w].size()) + " != " + std::to_string(n));
    }
  }
  // Chunk c covers [bounds[c], bounds[c + 1]).
  std::vector<size_t> bounds(W + 1);
  for (size_t c = 0; c <= W; ++c) bounds[c] = c * n / W;

  // Ring position p holds worker order[p].
  std::vector<size_t> order(W);
  for (size_t p = 0; p < W; ++p) order[p] = (ring_start + p) % W;

  // held[p][c]: contributions to chunk c that position p has gathered,
  // indexed by worker (empty when absent).
  using Contribs = std::vector<std::vector<double>>;
  std::vector<std::vector<Contribs>> held(W, std::vector<Contribs>(W, Contribs(W)));
  for (size_t p = 0; p < W; ++p) {
    const size_t w = order[p];
    for (size_t c = 0; c < W; ++c) {
      held[p][c][w].assign(inputs[w].begin() + bounds[c], inputs[w].begin() + bounds[c + 1]);
    }
  }

  // Scatter-reduce: at step s position p forwards chunk (p - s) mod W to p + 1.
  for (size_t s = 0; s + 1 < W; ++s) {
    std::vector<std::pair<size_t, Contribs>> messages(W);
    for (size_t p = 0; p < W; ++p) {
      const size_t c = (p + W - s % W) % W;
      messages[p] = {c, held[p][c]};
    }
    for (size_t p = 0; p < W; ++p) {
      const size_t dst = (p + 1) % W;
      auto& [c, contribs] = messages[p];
      for (size_t w = 0; w < W; ++w) {
        if (!contribs[w].empty()) held[dst][c][w] = std::move(contribs[w]);
      }
    }
  }

  // Position p now owns chunk (p + 1) mod W with every contribution.
  std::vector<std::vector<double>> outputs(W, std::vector<double>(n));
  std::vector<std::vector<double>> reduced(W);
  for (size_t p = 0; p < W; ++p) {
    const size_t c = (p + 1) % W;
    const size_t len = bounds[c + 1] - bounds[c];
    std::vector<double> sum(held[p][c][0]);
    if (sum.size() != len) Fail(ErrorKind::kArgument, "ring lost a contribution");
    for (size_t w = 1; w < W; ++w) {
      const auto& part = held[p][c][w];
      if (part.size() != len) Fail(ErrorKind::kArgument, "ring lost a contribution");
      for (size_t i = 0; i < len; ++i) sum[i] += part[i];
    }
    reduced[p] = std::move(sum);
  }

  // All-gather: at step s position p forwards chunk (p + 1 - s) mod W.
  std::vector<std::vector<std::vector<double>>> have(W, std::vector<std::vector<double>>(W));
  for (size_t p = 0; p < W; ++p) have[p][(p + 1) % W] = reduced[p];
  for (size_t s = 0; s + 1 < W; ++s) {
    std::vector<std::pair<size_t, std::vector<double>>> messages(W);
    for (size_t p = 0; p < W; ++p) {
      const size_t c = (p + 1 + W - s % W) % W;
      messages[p] = {c, have[p][c]};
    }
    for (size_t p = 0; p < W; ++p) {
      auto& [c, chunk] = messages[p];
      have[(p + 1) % W][c] = std::move(chunk);
    }
  }
  for (size_t p = 0; p < W; ++p) {
    auto& out = outputs[order[p]];
    for (size_t c = 0; c < W; ++c) {
      std::copy(have[p][c].begin(), have[p][c].end(), out.begin() + bounds[c]);
    }
  }
  return outputs;
}

double GlobalNorm(const std::vector<GradientVector>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values) {
      if (!std::isfinite(v)) {
        Fail(ErrorKind::kDomain, "worker " + std::to_string(g.worker_id) +
                                     " has a non-finite gradient entry");
      }
      sq += v * v;
    }
  }
  return std::sqrt(sq);
}

ClipResult ClipByGlobalNorm(std::vector<GradientVector>& grads, double clip_norm) {
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
    Fail(ErrorKind::kArgument, "clip_norm must be positive and finite");
  }
  ClipResult r;
  r.global_norm = GlobalNorm(grads);
  if (r.global_norm > clip_norm) {
    r.scale = clip_norm / r.global_norm;
    for (auto& g : grads) {
      for (double& v : g.values) v *= r.scale;
    }
  }
  return r;
}

void BenchConfig::Validate() const {
  if (servers.empty()) Fail(ErrorKind::kConfig, "bench needs at least one server count");
  for (size_t s : servers) {
    if (s < 1) Fail(ErrorKind::kConfig, "server counts must be >= 1");
  }
  if (consumers < 1) Fail(ErrorKind::kConfig, "consumers must be >= 1");
  if (!(step_cost_s >= 0.0)) Fail(ErrorKind::kConfig, "step_cost must be >= 0");
  if (repeats < 1) Fail(ErrorKind::kConfig, "repeats must be >= 1");
  if (num_utterances < 1 || num_shards < 1) Fail(ErrorKind::kConfig, "corpus must be non-empty");
  if (batch_size < 1) Fail(ErrorKind::kConfig, "batch_size must be >= 1");
  if (!(production_cost_s >= 0.0)) Fail(ErrorKind::kConfig, "production_cost_s must be >= 0");
}

double Median(std::vector<double> values) {
  if (values.empty()) Fail(ErrorKind::kArgument, "median of nothing");
  std::sort(values.begin(), values.end());
  const size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

namespace {

std::string SelfExecutable() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) Fail(ErrorKind::kLaunch, "cannot locate the running executable");
  return p.string();
}

struct RunResult {
  double epoch_time = 0.0;
  double t_session = 0.0;
  double first_batch_latency = 0.0;
  uint64_t batches = 0;
};

RunResult RunOnce(const BenchConfig& cfg, const exserver::ServerConfig& server_cfg,
                  size_t num_servers, const std::string& binary, const std::string& dir) {
  std::vector<exserver::ServerProcess> servers =
      exserver::LaunchServers(num_servers, server_cfg, binary, dir);

  const size_t G = cfg.consumers;
  std::vector<ThroughputStats> stats(G);
  std::vector<std::exception_ptr> errors(G);
  std::barrier sync(static_cast<std::ptrdiff_t>(G));
  std::vector<std::thread> threads;
  for (size_t g = 0; g < G; ++g) {
    threads.emplace_back([&, g] {
      std::unique_ptr<exserver::MergedBatchSource> source;
      try {
        std::vector<std::unique_ptr<exserver::ConsumerClient>> clients;
        for (const auto& s : servers) {
          exserver::ConsumerClient::Options opt;
          opt.pipeline = static_cast<int>(g);
          opt.max_credits = cfg.max_credits;
          // The simulated step stands in for an accelerator: transport
          // threads must not steal the stepping thread's core.
          opt.idle_reader = true;
          clients.push_back(std::make_unique<exserver::ConsumerClient>(s.endpoint(), opt));
        }
        source = std::make_unique<exserver::MergedBatchSource>(std::move(clients), true);
      } catch (...) {
        errors[g] = std::current_exception();
      }
      sync.arrive_and_wait();
      if (!source) return;
      stats[g] = ConsumeEpoch(*source, cfg.step_cost_s);
      source.reset();
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  RunResult r;
  for (const auto& s : stats) {
    if (!s.complete) Fail(ErrorKind::kDelivery, "bench consumer failed: " + s.error);
    r.epoch_time = std::max(r.epoch_time, s.epoch_time);
    r.t_session += s.t_session / static_cast<double>(G);
    r.first_batch_latency += s.first_batch_latency / static_cast<double>(G);
    r.batches += s.batches;
  }
  for (auto& s : servers) {
    if (s.Wait(10.0) != 0) s.Kill();
  }
  return r;
}

}  // namespace

std::vector<BenchRow> BenchScaling(const BenchConfig& cfg,
                                   const std::function<void(const BenchRow&)>& on_row) {
  cfg.Validate();
  const std::string binary = cfg.esf_binary.empty() ? SelfExecutable() : cfg.esf_binary;
  const std::filesystem::path dir = cfg.work_dir;
  std::filesystem::create_directories(dir);

  pipeline::SyntheticCorpusConfig corpus_cfg;
  corpus_cfg.num_utterances = cfg.num_utterances;
  corpus_cfg.min_seconds = cfg.min_seconds;
  corpus_cfg.max_seconds = cfg.max_seconds;
  corpus_cfg.seed = cfg.seed;
  const auto corpus = pipeline::SyntheticCorpus(corpus_cfg);
  const recordio::ShardSet shards =
      recordio::WriteShards(corpus, cfg.num_shards, (dir / "corpus-{}.esrd").string());

  exserver::ServerConfig server_cfg;
  server_cfg.num_pipelines = cfg.consumers;
  server_cfg.pipeline.shard_paths = shards.shard_paths;
  server_cfg.pipeline.batch_size = cfg.batch_size;
  server_cfg.pipeline.shuffle_buffer = cfg.shuffle_buffer;
  server_cfg.pipeline.interleave_cycle_length = cfg.interleave_cycle_length;
  server_cfg.pipeline.seed = cfg.seed;
  server_cfg.augment.enable_vtlp = cfg.augment;
  server_cfg.augment.enable_simulation = cfg.augment;
  server_cfg.max_credits = cfg.max_credits;
  server_cfg.cpu_slots = cfg.cpu_slots;
  server_cfg.production_cost_s = cfg.production_cost_s;

  std::vector<BenchRow> rows;
  for (size_t S : cfg.servers) {
    std::vector<double> epoch_times, t_sessions, latencies;
    BenchRow row;
    row.servers = S;
    row.consumers = cfg.consumers;
    row.ratio = static_cast<double>(S) / static_cast<double>(cfg.consumers);
    for (size_t r = 0; r < cfg.repeats; ++r) {
      const RunResult run = RunOnce(cfg, server_cfg, S, binary, dir.string());
      epoch_times.push_back(run.epoch_time);
      t_sessions.push_back(run.t_session);
      latencies.push_back(run.first_batch_latency);
      row.batches = run.batches;
    }
    row.epoch_time_s = Median(epoch_times);
    row.t_session = Median(t_sessions);
    row.first_batch_latency_s = Median(latencies);
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

std::string BenchCsvRow(const BenchRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.4f,%.4f,%.4f,%llu", row.servers, row.consumers,
                row.ratio, row.epoch_time_s, row.t_session,
                static_cast<unsigned long long>(row.batches));
  return buf;
}

std::string BenchCsv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << kBenchCsvHeader << "\n";
  for (const auto& r : rows) os << BenchCsvRow(r) << "\n";
  return os.str();
}

}  // namespace esf::trainsim
