// include/esf/trainsim.h

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

#ifndef ESF_TRAINSIM_H_
#define ESF_TRAINSIM_H_

// Simulated trainer: batch consumption with a synthetic step cost, the
// session-time utilisation metric, ring allreduce, global-norm clipping and
// the server-scaling benchmark.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "esf/pipeline.h"

namespace esf::trainsim {

struct ThroughputStats {
  double elapsed_time = 0.0;
  // Wall time spent inside simulated compute steps.
  double session_time = 0.0;
  double t_session = 0.0;
  uint64_t batches = 0;
  uint64_t utterances = 0;
  double epoch_time = 0.0;
  // Wait before the first batch arrived.
  double first_batch_latency = 0.0;
  // False when the stream failed part-way; `error` says why.
  bool complete = true;
  std::string error;
};

// session / elapsed, clamped to [0, 1]; 0 when nothing has elapsed.
double TSession(double session_time, double elapsed_time);

// Pulls every batch and holds each for `step_cost_s` of wall time.  The step
// sleeps rather than spins so that it does not compete with producers for
// CPU.
ThroughputStats ConsumeEpoch(pipeline::Source<pipeline::Batch>& stream, double step_cost_s);

// Utilisation of a consumer that never waits except for the first batch.
double ComputeBoundTSession(uint64_t batches, double step_cost_s, double first_batch_latency_s);

struct GradientVector {
  std::vector<double> values;
  size_t worker_id = 0;
};

// Chunked ring: W-1 scatter-reduce steps and W-1 all-gather steps between
// neighbours.  Scatter messages carry the per-worker contributions of a
// chunk and the chunk owner adds them in worker order, so every worker ends
// with exactly sum_w x_w evaluated left to right, whatever the ring start.
std::vector<std::vector<double>> RingAllreduce(const std::vector<std::vector<double>>& inputs,
                                               size_t ring_start = 0);

// Left-to-right elementwise sum over workers.
std::vector<double> DirectSum(const std::vector<std::vector<double>>& inputs);

struct ClipResult {
  double global_norm = 0.0;
  double scale = 1.0;
};

// Scales every gradient by clip_norm / global_norm when the global norm
// exceeds clip_norm.
ClipResult ClipByGlobalNorm(std::vector<GradientVector>& grads, double clip_norm);

double GlobalNorm(const std::vector<GradientVector>& grads);

struct BenchConfig {
  std::vector<size_t> servers{1, 2, 3, 4, 5};
  size_t consumers = 2;
  double step_cost_s = 0.02;
  size_t repeats = 3;
  size_t num_utterances = 2000;
  // Divisible by servers x consumers for every tested count keeps the
  // per-consumer load even.
  size_t num_shards = 120;
  double min_seconds = 0.2;
  double max_seconds = 0.4;
  size_t batch_size = 4;
  size_t shuffle_buffer = 16;
  size_t interleave_cycle_length = 4;
  // Each server models `cpu_slots` CPUs that need `production_cost_s` per
  // utterance on top of the real pipeline work.
  size_t cpu_slots = 1;
  double production_cost_s = 0.006;
  uint32_t max_credits = 4;
  bool augment = false;
  uint64_t seed = 1;
  std::string work_dir = "esf-bench";
  // Binary providing `serve`; empty means the running executable.
  std::string esf_binary;

  void Validate() const;
};

struct BenchRow {
  size_t servers = 0;
  size_t consumers = 0;
  double ratio = 0.0;
  double epoch_time_s = 0.0;
  double t_session = 0.0;
  uint64_t batches = 0;
  // Median over repeats of the consumers' mean first-batch wait.
  double first_batch_latency_s = 0.0;
};

// One row per server count, medians over `repeats` runs.
std::vector<BenchRow> BenchScaling(const BenchConfig& cfg,
                                   const std::function<void(const BenchRow&)>& on_row = {});

inline constexpr char kBenchCsvHeader[] = "servers,consumers,ratio,epoch_time_s,t_session,batches";

std::string BenchCsvRow(const BenchRow& row);
std::string BenchCsv(const std::vector<BenchRow>& rows);

double Median(std::vector<double> values);

}  // namespace esf::trainsim

#endif  // ESF_TRAINSIM_H_
