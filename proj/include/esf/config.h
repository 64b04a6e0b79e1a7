// include/esf/config.h

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

#ifndef ESF_CONFIG_H_
#define ESF_CONFIG_H_

// One JSON document configures every tool:
//
//   {"recordio": {...}, "pipeline": {..., "features": {...}}, "vtlp": {...},
//    "acoustic": {...}, "server": {...}, "bench": {...}, "fusion": {...}}
//
// Every section and key is optional; missing ones keep their defaults.
// Unknown keys are rejected with their full path, e.g. "pipeline.batchsize".

#include <string>
#include <string_view>

#include "esf/exserver.h"
#include "esf/fusion.h"
#include "esf/pipeline.h"
#include "esf/trainsim.h"

namespace esf::config {

inline constexpr char kConfigEnvVar[] = "ESF_CONFIG";

struct RecordioSettings {
  size_t num_shards = 8;
  std::string shard_pattern = "shard-{}.esrd";
};

struct ServerSettings {
  std::string bind = "127.0.0.1:0";
  size_t pipelines = 1;
  uint32_t max_credits = exserver::kDefaultMaxCredits;
  size_t cpu_slots = 0;
  double production_cost_s = 0.0;
  uint64_t epochs = 1;
  uint64_t seed_base = 0;
  size_t server_index = 0;
  size_t num_servers = 1;
};

struct FusionSettings {
  fusion::FusionWeights weights;
  fusion::SearchConfig search;
  double prior_smoothing = 1.0;
};

struct GlobalConfig {
  RecordioSettings recordio;
  pipeline::PipelineConfig pipeline;
  dsp::FrontendConfig features;
  pipeline::AugmentConfig augment;
  ServerSettings server;
  trainsim::BenchConfig bench;
  FusionSettings fusion;
};

// `source` names the document in error messages.
GlobalConfig ParseConfig(std::string_view json_text, const std::string& source = "config");
GlobalConfig LoadConfig(const std::string& path);
// The file named by $ESF_CONFIG, or defaults when it is unset or empty.
GlobalConfig LoadDefaultConfig();

std::string DumpConfig(const GlobalConfig& cfg);

// Applies "section.key=value"; the value is read as JSON when it parses and
// as a string otherwise.
void ApplyOverride(GlobalConfig* cfg, std::string_view assignment);

exserver::ServerConfig MakeServerConfig(const GlobalConfig& cfg);
GlobalConfig FromServerConfig(const exserver::ServerConfig& server);
void SaveServerConfig(const exserver::ServerConfig& server, const std::string& path);

}  // namespace esf::config

#endif  // ESF_CONFIG_H_
