// src/config.cc

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

#include "esf/config.h"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace esf::config {

using json = nlohmann::json;

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<dsp::FeatureKind> kFeatureKinds[] = {
    {dsp::FeatureKind::kPowerMel, "power_mel"},
    {dsp::FeatureKind::kMelEnergy, "mel"},
    {dsp::FeatureKind::kMfcc, "mfcc"},
};

constexpr EnumName<sim::AbsorptionModel> kAbsorptionModels[] = {
    {sim::AbsorptionModel::kShoebox, "shoebox"},
    {sim::AbsorptionModel::kSabine, "sabine"},
    {sim::AbsorptionModel::kEyring, "eyring"},
};

constexpr EnumName<pipeline::MapFailurePolicy> kFailurePolicies[] = {
    {pipeline::MapFailurePolicy::kSkip, "skip"},
    {pipeline::MapFailurePolicy::kFatal, "fatal"},
};

class JsonWriter {
 public:
  explicit JsonWriter(json* obj) : obj_(obj) { *obj_ = json::object(); }

  template <typename T>
  void operator()(const char* key, T& value) {
    (*obj_)[key] = value;
  }

  template <typename E, size_t N>
  void Enum(const char* key, E& value, const EnumName<E> (&names)[N]) {
    for (const auto& n : names) {
      if (n.value == value) (*obj_)[key] = n.name;
    }
  }

  template <typename Fn>
  void Section(const char* key, Fn fn) {
    JsonWriter child(&(*obj_)[key]);
    fn(child);
  }

 private:
  json* obj_;
};

class JsonReader {
 public:
  JsonReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) Fail(ErrorKind::kConfig, Where() + ": expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    const json* v = Take(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (!v->is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw std::invalid_argument("expected a string");
      }
      value = v->get<T>();
    } catch (const std::exception& e) {
      Fail(ErrorKind::kConfig, Where(key) + ": " + e.what());
    }
  }

  template <typename E, size_t N>
  void Enum(const char* key, E& value, const EnumName<E> (&names)[N]) {
    const json* v = Take(key);
    if (!v) return;
    std::string allowed;
    if (v->is_string()) {
      for (const auto& n : names) {
        if (v->get<std::string>() == n.name) {
          value = n.value;
          return;
        }
      }
    }
    for (const auto& n : names) allowed += std::string(allowed.empty() ? "" : ", ") + n.name;
    Fail(ErrorKind::kConfig, Where(key) + ": expected one of " + allowed);
  }

  template <typename Fn>
  void Section(const char* key, Fn fn) {
    const json* v = Take(key);
    if (!v) return;
    JsonReader child(*v, Where(key));
    fn(child);
    child.Finish();
  }

  void Finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) Fail(ErrorKind::kConfig, "unknown key '" + Where(it.key().c_str()) + "'");
    }
  }

 private:
  const json* Take(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  std::string Where() const { return path_.empty() ? "<root>" : path_; }
  std::string Where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename V>
void VisitFeatures(V& v, dsp::FrontendConfig& f) {
  v("window_ms", f.stft.window_ms);
  v("hop_ms", f.stft.hop_ms);
  v("dft_size", f.stft.dft_size);
  v("num_filters", f.num_filters);
  v("fmin", f.fmin);
  v("fmax", f.fmax);
  v.Enum("kind", f.kind, kFeatureKinds);
  v("num_ceps", f.num_ceps);
}

template <typename V>
void Visit(V& v, GlobalConfig& c) {
  v.Section("recordio", [&](auto& s) {
    s("num_shards", c.recordio.num_shards);
    s("shard_pattern", c.recordio.shard_pattern);
  });
  v.Section("pipeline", [&](auto& s) {
    auto& p = c.pipeline;
    s("shard_paths", p.shard_paths);
    s("interleave_cycle_length", p.interleave_cycle_length);
    s("shuffle_buffer", p.shuffle_buffer);
    s("batch_size", p.batch_size);
    s("pad_value", p.pad_value);
    s("seed", p.seed);
    s("epoch", p.epoch);
    s("parallel_map_width", p.parallel_map_width);
    s("tokenizer", p.tokenizer);
    s.Enum("map_failure", p.map_failure, kFailurePolicies);
    s.Section("features", [&](auto& f) { VisitFeatures(f, c.features); });
  });
  v.Section("vtlp", [&](auto& s) {
    auto& w = c.augment.warp;
    s("enabled", c.augment.enable_vtlp);
    s("alpha", w.alpha);
    s("alpha_min", w.alpha_min);
    s("alpha_max", w.alpha_max);
    s("window_ms", w.analysis_window_ms);
    s("hop_ms", w.analysis_hop_ms);
    s("dft_size", w.dft_size);
  });
  v.Section("acoustic", [&](auto& s) {
    auto& a = c.augment.simulator;
    s("enabled", c.augment.enable_simulation);
    s("dims_min", a.dims_min);
    s("dims_max", a.dims_max);
    s("t60_min", a.t60_min);
    s("t60_max", a.t60_max);
    s("snr_min_db", a.snr_min_db);
    s("snr_max_db", a.snr_max_db);
    s("noise_source", a.noise_source);
    s("probability_of_reverb", a.probability_of_reverb);
    s("probability_of_noise", a.probability_of_noise);
    s("max_image_order", a.max_image_order);
    s("wall_clearance", a.wall_clearance);
    s.Enum("absorption_model", a.absorption_model, kAbsorptionModels);
  });
  v.Section("server", [&](auto& s) {
    auto& sv = c.server;
    s("bind", sv.bind);
    s("pipelines", sv.pipelines);
    s("max_credits", sv.max_credits);
    s("cpu_slots", sv.cpu_slots);
    s("production_cost_s", sv.production_cost_s);
    s("epochs", sv.epochs);
    s("seed_base", sv.seed_base);
    s("server_index", sv.server_index);
    s("num_servers", sv.num_servers);
  });
  v.Section("bench", [&](auto& s) {
    auto& b = c.bench;
    s("servers", b.servers);
    s("consumers", b.consumers);
    s("step_cost_s", b.step_cost_s);
    s("repeats", b.repeats);
    s("num_utterances", b.num_utterances);
    s("num_shards", b.num_shards);
    s("min_seconds", b.min_seconds);
    s("max_seconds", b.max_seconds);
    s("batch_size", b.batch_size);
    s("shuffle_buffer", b.shuffle_buffer);
    s("interleave_cycle_length", b.interleave_cycle_length);
    s("cpu_slots", b.cpu_slots);
    s("production_cost_s", b.production_cost_s);
    s("max_credits", b.max_credits);
    s("augment", b.augment);
    s("seed", b.seed);
    s("work_dir", b.work_dir);
  });
  v.Section("fusion", [&](auto& s) {
    auto& f = c.fusion;
    s("lambda_p", f.weights.lambda_p);
    s("lambda_lm", f.weights.lambda_lm);
    s("beam_size", f.search.beam_size);
    s("max_len", f.search.max_len);
    s("sos_id", f.search.sos_id);
    s("eos_id", f.search.eos_id);
    s("length_normalize", f.search.length_normalize);
    s("prior_smoothing", f.prior_smoothing);
  });
}

json ToJson(const GlobalConfig& cfg) {
  json doc;
  GlobalConfig copy = cfg;
  JsonWriter writer(&doc);
  Visit(writer, copy);
  return doc;
}

GlobalConfig FromJson(const json& doc) {
  GlobalConfig cfg;
  JsonReader reader(doc, "");
  Visit(reader, cfg);
  reader.Finish();
  return cfg;
}

}  // namespace

GlobalConfig ParseConfig(std::string_view json_text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kConfig, source + ": invalid JSON: " + e.what());
  }
  try {
    return FromJson(doc);
  } catch (const Error& e) {
    Fail(ErrorKind::kConfig, source + ": " + e.message());
  }
}

GlobalConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kConfig, "cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str(), path);
}

GlobalConfig LoadDefaultConfig() {
  const char* path = std::getenv(kConfigEnvVar);
  if (!path || !*path) return GlobalConfig{};
  return LoadConfig(path);
}

std::string DumpConfig(const GlobalConfig& cfg) { return ToJson(cfg).dump(2) + "\n"; }

void ApplyOverride(GlobalConfig* cfg, std::string_view assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    Fail(ErrorKind::kConfig, "override must look like section.key=value, got '" +
                                 std::string(assignment) + "'");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json doc = ToJson(*cfg);
  json* node = &doc;
  std::string_view rest = path;
  while (true) {
    const size_t dot = rest.find('.');
    const std::string key(rest.substr(0, dot));
    if (key.empty()) Fail(ErrorKind::kConfig, "empty key in override '" + path + "'");
    if (dot == std::string_view::npos) {
      if (!node->contains(key)) Fail(ErrorKind::kConfig, "unknown key '" + path + "'");
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) {
      Fail(ErrorKind::kConfig, "unknown key '" + path + "'");
    }
    node = &(*node)[key];
    rest.remove_prefix(dot + 1);
  }
  *cfg = FromJson(doc);
}

exserver::ServerConfig MakeServerConfig(const GlobalConfig& cfg) {
  exserver::ServerConfig s;
  s.bind = exserver::ParseEndpoint(cfg.server.bind);
  s.num_pipelines = cfg.server.pipelines;
  s.server_index = cfg.server.server_index;
  s.num_servers = cfg.server.num_servers;
  s.pipeline = cfg.pipeline;
  s.augment = cfg.augment;
  s.frontend = cfg.features;
  s.seed_base = cfg.server.seed_base;
  s.epochs = cfg.server.epochs;
  s.max_credits = cfg.server.max_credits;
  s.cpu_slots = cfg.server.cpu_slots;
  s.production_cost_s = cfg.server.production_cost_s;
  return s;
}

GlobalConfig FromServerConfig(const exserver::ServerConfig& s) {
  GlobalConfig cfg;
  cfg.server.bind = s.bind.ToString();
  cfg.server.pipelines = s.num_pipelines;
  cfg.server.server_index = s.server_index;
  cfg.server.num_servers = s.num_servers;
  cfg.pipeline = s.pipeline;
  cfg.augment = s.augment;
  cfg.features = s.frontend;
  cfg.server.seed_base = s.seed_base;
  cfg.server.epochs = s.epochs;
  cfg.server.max_credits = s.max_credits;
  cfg.server.cpu_slots = s.cpu_slots;
  cfg.server.production_cost_s = s.production_cost_s;
  return cfg;
}

void SaveServerConfig(const exserver::ServerConfig& server, const std::string& path) {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write config: " + path);
  out << DumpConfig(FromServerConfig(server));
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path);
}

}  // namespace esf::config
