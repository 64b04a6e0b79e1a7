// tools/cli.cc

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

#include "cli.h"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "esf/acoustic_sim.h"
#include "esf/config.h"
#include "esf/exserver.h"
#include "esf/fusion.h"
#include "esf/pipeline.h"
#include "esf/recordio.h"
#include "esf/trainsim.h"
#include "esf/vtlp.h"

namespace esf::cli {

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArgument:
    case ErrorKind::kConfig:
      return kExitUsage;
    case ErrorKind::kNetwork:
    case ErrorKind::kProtocol:
    case ErrorKind::kDelivery:
    case ErrorKind::kLaunch:
      return kExitNetwork;
    default:
      return kExitData;
  }
}

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;

  config::GlobalConfig Load() const {
    config::GlobalConfig cfg =
        config_path.empty() ? config::LoadDefaultConfig() : config::LoadConfig(config_path);
    for (const auto& o : overrides) config::ApplyOverride(&cfg, o);
    return cfg;
  }
};

// "1..5" or "1,2,4".
std::vector<size_t> ParseCounts(const std::string& text) {
  std::vector<size_t> out;
  const size_t dots = text.find("..");
  try {
    if (dots != std::string::npos) {
      const size_t lo = std::stoul(text.substr(0, dots));
      const size_t hi = std::stoul(text.substr(dots + 2));
      if (lo < 1 || hi < lo) throw std::invalid_argument("range");
      for (size_t s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    }
  } catch (const std::exception&) {
    Fail(ErrorKind::kArgument, "expected a count list like 1..5 or 1,2,4, got '" + text + "'");
  }
  if (out.empty()) Fail(ErrorKind::kArgument, "empty count list");
  return out;
}

dsp::Waveform RecordWaveform(const recordio::UtteranceRecord& rec) {
  return dsp::Waveform{recordio::PcmToFloat(rec.samples), static_cast<int>(rec.sample_rate)};
}

// --- shard -----------------------------------------------------------------

struct ShardArgs {
  size_t synthetic = 0;
  std::string manifest;
  std::optional<size_t> num_shards;
  std::optional<std::string> pattern;
  uint64_t seed = 1;
  double min_seconds = 0.5;
  double max_seconds = 1.5;
};

int RunShard(const Globals& g, const ShardArgs& a) {
  const config::GlobalConfig cfg = g.Load();
  std::vector<recordio::UtteranceRecord> records;
  if (a.synthetic > 0 && !a.manifest.empty()) {
    Fail(ErrorKind::kArgument, "give either --synthetic or --manifest, not both");
  }
  if (a.synthetic > 0) {
    pipeline::SyntheticCorpusConfig sc;
    sc.num_utterances = a.synthetic;
    sc.seed = a.seed;
    sc.min_seconds = a.min_seconds;
    sc.max_seconds = a.max_seconds;
    records = pipeline::SyntheticCorpus(sc);
  } else if (!a.manifest.empty()) {
    std::ifstream in(a.manifest);
    if (!in) Fail(ErrorKind::kIo, "cannot open manifest: " + a.manifest);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::stringstream ss(line);
      std::string id, path, transcript;
      if (!std::getline(ss, id, '\t') || !std::getline(ss, path, '\t')) {
        Fail(ErrorKind::kFormat, a.manifest + ":" + std::to_string(line_no) +
                                     ": expected utt_id<TAB>wav<TAB>transcript");
      }
      std::getline(ss, transcript);
      const dsp::Waveform w = dsp::ReadWav(path);
      recordio::UtteranceRecord rec;
      rec.utt_id = id;
      rec.sample_rate = static_cast<uint32_t>(w.sample_rate);
      rec.samples = recordio::FloatToPcm(w.samples);
      rec.transcript = transcript;
      records.push_back(std::move(rec));
    }
  } else {
    Fail(ErrorKind::kArgument, "shard needs --synthetic N or --manifest FILE");
  }
  const recordio::ShardSet set = recordio::WriteShards(
      records, a.num_shards.value_or(cfg.recordio.num_shards),
      a.pattern.value_or(cfg.recordio.shard_pattern));
  for (const auto& p : set.shard_paths) std::cout << p << "\n";
  std::cerr << "wrote " << records.size() << " records to " << set.num_shards() << " shards\n";
  return kExitOk;
}

// --- inspect ---------------------------------------------------------------

int RunInspect(const std::vector<std::string>& paths, bool summary_only) {
  size_t total = 0;
  double seconds = 0.0;
  for (const auto& path : paths) {
    recordio::ShardReader reader(path);
    while (auto rec = reader.Next()) {
      ++total;
      const double dur = static_cast<double>(rec->samples.size()) / rec->sample_rate;
      seconds += dur;
      if (summary_only) continue;
      std::cout << rec->utt_id << "\t" << rec->sample_rate << "\t" << rec->samples.size() << "\t"
                << std::fixed << std::setprecision(3) << dur << "\t" << rec->transcript;
      for (const auto& [k, v] : rec->metadata) std::cout << "\t" << k << "=" << v;
      std::cout << "\n";
    }
  }
  std::cerr << total << " records, " << std::fixed << std::setprecision(2) << seconds
            << " s of audio in " << paths.size() << " shard(s)\n";
  return kExitOk;
}

// --- augment ---------------------------------------------------------------

struct AugmentArgs {
  std::string input, output;
  std::optional<double> vtlp_alpha;
  bool vtlp_random = false;
  bool simulate = false;
  uint64_t seed = 0;
};

int RunAugment(const Globals& g, const AugmentArgs& a) {
  const config::GlobalConfig cfg = g.Load();
  dsp::Waveform w = dsp::ReadWav(a.input);
  Rng rng(a.seed);
  if (a.vtlp_alpha || a.vtlp_random) {
    vtlp::WarpSpec spec = cfg.augment.warp;
    vtlp::VtlpResult r = a.vtlp_alpha ? vtlp::VtlpResynthesize(w, spec, *a.vtlp_alpha)
                                      : vtlp::VtlpResynthesize(w, spec, rng);
    std::cerr << "vtlp alpha " << r.alpha << (r.passthrough ? " (input too short, unchanged)" : "")
              << "\n";
    w = std::move(r.waveform);
  }
  if (a.simulate) {
    recordio::UtteranceRecord rec;
    rec.utt_id = a.input;
    rec.sample_rate = static_cast<uint32_t>(w.sample_rate);
    rec.samples = recordio::FloatToPcm(w.samples);
    sim::SimulationInfo info;
    auto bank = sim::NoiseBank::FromSource(cfg.augment.simulator.noise_source);
    rec = sim::Simulate(rec, rng, cfg.augment.simulator, *bank, &info);
    for (const auto& [k, v] : rec.metadata) std::cerr << k << "=" << v << "\n";
    w = RecordWaveform(rec);
  }
  dsp::WriteWav(a.output, w);
  return kExitOk;
}

// --- features --------------------------------------------------------------

int RunFeatures(const Globals& g, const std::string& input, const std::string& output,
                const std::string& kind) {
  config::GlobalConfig cfg = g.Load();
  if (!kind.empty()) config::ApplyOverride(&cfg, "pipeline.features.kind=\"" + kind + "\"");
  const dsp::FeatureMatrix f = dsp::ComputeFeatures(dsp::ReadWav(input), cfg.features);
  const std::string csv = dsp::FeaturesToCsv(f);
  if (output.empty() || output == "-") {
    std::cout << csv;
  } else {
    std::ofstream out(output);
    if (!out) Fail(ErrorKind::kIo, "cannot write " + output);
    out << csv;
  }
  std::cerr << f.num_frames << " frames x " << f.num_coeffs << " " << dsp::FeatureKindName(f.kind)
            << "\n";
  return kExitOk;
}

// --- pipeline-dryrun -------------------------------------------------------

struct DryrunArgs {
  std::vector<std::string> shards;
  std::optional<uint64_t> seed;
  std::optional<size_t> width;
  std::optional<size_t> batch_size;
  size_t max_batches = 0;
  bool no_augment = false;
};

int RunDryrun(const Globals& g, const DryrunArgs& a) {
  config::GlobalConfig cfg = g.Load();
  if (!a.shards.empty()) cfg.pipeline.shard_paths = a.shards;
  if (a.seed) cfg.pipeline.seed = *a.seed;
  if (a.width) cfg.pipeline.parallel_map_width = *a.width;
  if (a.batch_size) cfg.pipeline.batch_size = *a.batch_size;
  if (a.no_augment) cfg.augment.enable_vtlp = cfg.augment.enable_simulation = false;
  pipeline::Pipeline p = pipeline::BuildPipeline(cfg.pipeline, cfg.augment, cfg.features);
  uint64_t checksum = 0;
  size_t batches = 0, records = 0;
  while (auto b = p.batches->Next()) {
    checksum = pipeline::UpdateChecksum(checksum, *b);
    std::cout << "batch " << b->sequence << " B=" << b->batch_size << " T=" << b->max_frames
              << " F=" << b->feature_dim << " L=" << b->max_labels << "\n";
    ++batches;
    records += b->batch_size;
    if (a.max_batches && batches >= a.max_batches) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(checksum));
  std::cout << "batches " << batches << " records " << records << " skipped "
            << p.stats->skipped() << " checksum " << hex << "\n";
  return kExitOk;
}

// --- serve / launch / consume ----------------------------------------------

struct ServeArgs {
  std::optional<std::string> bind;
  std::optional<size_t> pipelines;
  std::optional<size_t> server_index, num_servers;
  std::optional<uint64_t> epochs;
  std::vector<std::string> shards;
};

exserver::ServerConfig ServerConfigFrom(const Globals& g, const ServeArgs& a) {
  config::GlobalConfig cfg = g.Load();
  if (a.bind) cfg.server.bind = *a.bind;
  if (a.pipelines) cfg.server.pipelines = *a.pipelines;
  if (a.server_index) cfg.server.server_index = *a.server_index;
  if (a.num_servers) cfg.server.num_servers = *a.num_servers;
  if (a.epochs) cfg.server.epochs = *a.epochs;
  if (!a.shards.empty()) cfg.pipeline.shard_paths = a.shards;
  return config::MakeServerConfig(cfg);
}

int RunServe(const Globals& g, const ServeArgs& a) {
  exserver::ExampleServer server(ServerConfigFrom(g, a));
  const exserver::Endpoint ep = server.Start();
  std::cout << "LISTENING " << ep.ToString() << std::endl;
  server.Wait();
  return kExitOk;
}

int RunLaunch(const Globals& g, const ServeArgs& a, size_t n, const std::string& work_dir) {
  const exserver::ServerConfig cfg = ServerConfigFrom(g, a);
  std::error_code ec;
  const std::string self = std::filesystem::read_symlink("/proc/self/exe", ec).string();
  if (ec) Fail(ErrorKind::kLaunch, "cannot locate the esf executable");
  std::vector<exserver::ServerProcess> servers = exserver::LaunchServers(n, cfg, self, work_dir);
  for (const auto& s : servers) std::cout << s.endpoint().ToString() << std::endl;
  int worst = 0;
  for (auto& s : servers) {
    int status;
    while ((status = s.Wait(3600.0)) == -1 && s.pid() > 0) {
    }
    worst = std::max(worst, status);
  }
  return worst == 0 ? kExitOk : kExitNetwork;
}

struct ConsumeArgs {
  std::vector<std::string> endpoints;
  int pipeline = -1;
  double step_cost = 0.0;
  uint32_t max_credits = exserver::kDefaultMaxCredits;
  double connect_timeout = 10.0;
  bool print_batches = false;
};

// Wraps a source to print each batch as it is consumed.
class PrintingSource : public pipeline::Source<pipeline::Batch> {
 public:
  explicit PrintingSource(pipeline::Source<pipeline::Batch>& inner) : inner_(inner) {}
  std::optional<pipeline::Batch> Next() override {
    auto b = inner_.Next();
    if (b) {
      std::cout << "batch " << b->sequence << " B=" << b->batch_size << " T=" << b->max_frames;
      for (const auto& id : b->utt_ids) std::cout << " " << id;
      std::cout << "\n";
    }
    return b;
  }

 private:
  pipeline::Source<pipeline::Batch>& inner_;
};

int RunConsume(const ConsumeArgs& a) {
  if (a.endpoints.empty()) Fail(ErrorKind::kArgument, "consume needs at least one --endpoint");
  std::vector<std::unique_ptr<exserver::ConsumerClient>> clients;
  for (const auto& e : a.endpoints) {
    exserver::ConsumerClient::Options opt;
    opt.pipeline = a.pipeline;
    opt.max_credits = a.max_credits;
    opt.connect_timeout_s = a.connect_timeout;
    clients.push_back(std::make_unique<exserver::ConsumerClient>(exserver::ParseEndpoint(e), opt));
  }
  exserver::MergedBatchSource merged(std::move(clients));
  PrintingSource printing(merged);
  pipeline::Source<pipeline::Batch>& source =
      a.print_batches ? static_cast<pipeline::Source<pipeline::Batch>&>(printing) : merged;
  const trainsim::ThroughputStats s = trainsim::ConsumeEpoch(source, a.step_cost);
  std::cout << std::fixed << std::setprecision(4) << "batches " << s.batches << " utterances "
            << s.utterances << " elapsed_s " << s.elapsed_time << " session_s " << s.session_time
            << " t_session " << s.t_session << "\n";
  if (!s.complete) {
    std::cerr << "esf: incomplete epoch: " << s.error << "\n";
    return kExitNetwork;
  }
  return kExitOk;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::optional<std::string> servers;
  std::optional<size_t> consumers, repeats, utterances;
  std::optional<double> step_cost, production_cost;
  std::optional<std::string> work_dir;
  std::string output;
};

int RunBench(const Globals& g, const BenchArgs& a) {
  config::GlobalConfig cfg = g.Load();
  trainsim::BenchConfig b = cfg.bench;
  if (a.servers) b.servers = ParseCounts(*a.servers);
  if (a.consumers) b.consumers = *a.consumers;
  if (a.repeats) b.repeats = *a.repeats;
  if (a.utterances) b.num_utterances = *a.utterances;
  if (a.step_cost) b.step_cost_s = *a.step_cost;
  if (a.production_cost) b.production_cost_s = *a.production_cost;
  if (a.work_dir) b.work_dir = *a.work_dir;
  std::cout << trainsim::kBenchCsvHeader << std::endl;
  const auto rows = trainsim::BenchScaling(b, [](const trainsim::BenchRow& row) {
    std::cout << trainsim::BenchCsvRow(row) << std::endl;
  });
  if (!a.output.empty()) {
    std::ofstream out(a.output);
    if (!out) Fail(ErrorKind::kIo, "cannot write " + a.output);
    out << trainsim::BenchCsv(rows);
  }
  return kExitOk;
}

// --- decode ----------------------------------------------------------------

struct DecodeArgs {
  std::string am, lm, prior, prior_corpus;
  std::optional<double> lambda_p, lambda_lm;
  std::optional<size_t> beam, max_len;
  std::optional<int32_t> sos, eos;
  bool exhaustive = false;
};

std::vector<fusion::TokenSeq> ReadIdCorpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open " + path);
  std::vector<fusion::TokenSeq> corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    fusion::TokenSeq seq;
    std::string tok;
    while (ss >> tok) {
      try {
        seq.push_back(static_cast<int32_t>(std::stol(tok)));
      } catch (const std::exception&) {
        Fail(ErrorKind::kFormat, path + ": '" + tok + "' is not a token id");
      }
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  return corpus;
}

int RunDecode(const Globals& g, const DecodeArgs& a) {
  const config::GlobalConfig cfg = g.Load();
  fusion::FusionWeights w = cfg.fusion.weights;
  fusion::SearchConfig sc = cfg.fusion.search;
  if (a.lambda_p) w.lambda_p = *a.lambda_p;
  if (a.lambda_lm) w.lambda_lm = *a.lambda_lm;
  if (a.beam) sc.beam_size = *a.beam;
  if (a.max_len) sc.max_len = *a.max_len;
  if (a.sos) sc.sos_id = *a.sos;
  if (a.eos) sc.eos_id = *a.eos;
  auto am = fusion::LoadScorer(a.am);
  std::unique_ptr<fusion::StepScorer> lm;
  if (!a.lm.empty()) lm = fusion::LoadScorer(a.lm);
  fusion::PriorModel prior;
  if (!a.prior.empty() && !a.prior_corpus.empty()) {
    Fail(ErrorKind::kArgument, "give either --prior or --prior-corpus, not both");
  }
  if (!a.prior.empty()) {
    auto table = fusion::LoadScorer(a.prior);
    prior.log_prob = table->Score({sc.sos_id});
  } else if (!a.prior_corpus.empty()) {
    prior = fusion::EstimatePrior(ReadIdCorpus(a.prior_corpus), am->vocab_size(),
                                  cfg.fusion.prior_smoothing);
  } else {
    prior = fusion::UniformPrior(am->vocab_size());
  }
  prior.Validate();
  const fusion::SearchResult r =
      a.exhaustive ? fusion::ExhaustiveSearch(*am, lm.get(), prior, w, sc)
                   : fusion::BeamSearch(*am, lm.get(), prior, w, sc);
  std::cout << "tokens";
  for (int32_t t : r.best.tokens) std::cout << " " << t;
  std::cout << "\nscore " << std::setprecision(17) << r.best.score << "\nfinished "
            << (r.best.finished ? "yes" : "no") << "\n";
  return kExitOk;
}

}  // namespace

int Run(int argc, char** argv) {
  CLI::App app{"esf: sharded speech data, augmentation, example servers and fusion decoding"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file (default: $ESF_CONFIG)");
  app.add_option("--set", g.overrides, "Override a config field, e.g. pipeline.batch_size=16")
      ->take_all();
  app.fallthrough();

  // shard
  ShardArgs shard;
  auto* c_shard = app.add_subcommand("shard", "Write utterances into CRC-framed shards");
  c_shard->add_option("--synthetic", shard.synthetic, "Generate N synthetic utterances");
  c_shard->add_option("--manifest", shard.manifest, "TSV of utt_id, wav path, transcript");
  c_shard->add_option("--num-shards", shard.num_shards, "Number of shards");
  c_shard->add_option("--pattern", shard.pattern, "Output path pattern with {} for the index");
  c_shard->add_option("--seed", shard.seed, "Seed for --synthetic");
  c_shard->add_option("--min-seconds", shard.min_seconds, "Shortest synthetic utterance");
  c_shard->add_option("--max-seconds", shard.max_seconds, "Longest synthetic utterance");

  // inspect
  std::vector<std::string> inspect_paths;
  bool inspect_summary = false;
  auto* c_inspect = app.add_subcommand("inspect", "List the records of shards, verifying CRCs");
  c_inspect->add_option("shards", inspect_paths, "Shard files")->required();
  c_inspect->add_flag("--summary", inspect_summary, "Only print totals");

  // augment
  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "Apply VTLP and/or room simulation to a WAV file");
  c_aug->add_option("input", aug.input, "Input WAV")->required();
  c_aug->add_option("output", aug.output, "Output WAV")->required();
  auto* alpha_opt = c_aug->add_option("--vtlp-alpha", aug.vtlp_alpha, "Fixed warping factor");
  c_aug->add_flag("--vtlp-random", aug.vtlp_random, "Draw the warping factor from the config range")
      ->excludes(alpha_opt);
  c_aug->add_flag("--simulate", aug.simulate, "Add reverberation and noise");
  c_aug->add_option("--seed", aug.seed, "Random seed");

  // features
  std::string feat_in, feat_out, feat_kind;
  auto* c_feat = app.add_subcommand("features", "Compute features of a WAV file as CSV");
  c_feat->add_option("input", feat_in, "Input WAV")->required();
  c_feat->add_option("-o,--output", feat_out, "CSV output (default stdout)");
  c_feat->add_option("--kind", feat_kind, "power_mel, mel or mfcc")
      ->check(CLI::IsMember({"power_mel", "mel", "mfcc"}));

  // pipeline-dryrun
  DryrunArgs dry;
  auto* c_dry = app.add_subcommand("pipeline-dryrun", "Run the input pipeline and print batch shapes");
  c_dry->add_option("--shards", dry.shards, "Shard files (default from config)");
  c_dry->add_option("--seed", dry.seed, "Pipeline seed");
  c_dry->add_option("--width", dry.width, "parallel_map_width");
  c_dry->add_option("--batch-size", dry.batch_size, "Batch size");
  c_dry->add_option("--max-batches", dry.max_batches, "Stop after N batches (0 = all)");
  c_dry->add_flag("--no-augment", dry.no_augment, "Disable VTLP and simulation");

  // serve / launch
  ServeArgs serve;
  auto add_serve_options = [&serve](CLI::App* c) {
    c->add_option("--bind", serve.bind, "host:port (port 0 picks a free one)");
    c->add_option("--pipelines", serve.pipelines, "Pipelines per server");
    c->add_option("--server-index", serve.server_index, "This server's index");
    c->add_option("--num-servers", serve.num_servers, "Total number of servers");
    c->add_option("--epochs", serve.epochs, "Epochs to serve");
    c->add_option("--shards", serve.shards, "Corpus shards (default from config)");
  };
  auto* c_serve = app.add_subcommand("serve", "Run one example server");
  add_serve_options(c_serve);
  size_t launch_n = 1;
  std::string launch_dir = "esf-launch";
  auto* c_launch = app.add_subcommand("launch", "Spawn local example server processes");
  add_serve_options(c_launch);
  c_launch->add_option("-n,--count", launch_n, "Number of servers")->check(CLI::PositiveNumber);
  c_launch->add_option("--work-dir", launch_dir, "Directory for the shared server config");

  // consume
  ConsumeArgs consume;
  auto* c_consume = app.add_subcommand("consume", "Consume one epoch from example servers");
  c_consume->add_option("--endpoint", consume.endpoints, "host:port, repeatable")->required();
  c_consume->add_option("--pipeline", consume.pipeline, "Requested pipeline (-1 = any)");
  c_consume->add_option("--step-cost", consume.step_cost, "Simulated seconds per batch");
  c_consume->add_option("--max-credits", consume.max_credits, "Outstanding batch credits");
  c_consume->add_option("--connect-timeout", consume.connect_timeout, "Seconds to keep retrying");
  c_consume->add_flag("--print-batches", consume.print_batches, "Print every batch");

  // bench
  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Epoch time and t_session against server count");
  c_bench->add_option("--servers", bench.servers, "Server counts, e.g. 1..5");
  c_bench->add_option("--consumers", bench.consumers, "Simulated trainers");
  c_bench->add_option("--step-cost", bench.step_cost, "Seconds per training step");
  c_bench->add_option("--production-cost", bench.production_cost, "Server seconds per utterance");
  c_bench->add_option("--repeats", bench.repeats, "Runs per configuration");
  c_bench->add_option("--utterances", bench.utterances, "Synthetic corpus size");
  c_bench->add_option("--work-dir", bench.work_dir, "Scratch directory");
  c_bench->add_option("-o,--output", bench.output, "Also write the CSV here");

  // decode
  DecodeArgs dec;
  auto* c_dec = app.add_subcommand("decode", "Shallow-fusion beam search with toy scorers");
  c_dec->add_option("--am", dec.am, "Acoustic scorer JSON")->required();
  c_dec->add_option("--lm", dec.lm, "Language model scorer JSON");
  c_dec->add_option("--prior", dec.prior, "Prior as a scorer JSON (first-step row)");
  c_dec->add_option("--prior-corpus", dec.prior_corpus, "Token-id transcripts to estimate the prior");
  c_dec->add_option("--lambda-p", dec.lambda_p, "Prior weight");
  c_dec->add_option("--lambda-lm", dec.lambda_lm, "LM weight");
  c_dec->add_option("--beam", dec.beam, "Beam size");
  c_dec->add_option("--max-len", dec.max_len, "Maximum output length");
  c_dec->add_option("--sos", dec.sos, "Start token id");
  c_dec->add_option("--eos", dec.eos, "End token id");
  c_dec->add_flag("--exhaustive", dec.exhaustive, "Enumerate every sequence instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_shard) return RunShard(g, shard);
    if (*c_inspect) return RunInspect(inspect_paths, inspect_summary);
    if (*c_aug) return RunAugment(g, aug);
    if (*c_feat) return RunFeatures(g, feat_in, feat_out, feat_kind);
    if (*c_dry) return RunDryrun(g, dry);
    if (*c_serve) return RunServe(g, serve);
    if (*c_launch) return RunLaunch(g, serve, launch_n, launch_dir);
    if (*c_consume) return RunConsume(consume);
    if (*c_bench) return RunBench(g, bench);
    if (*c_dec) return RunDecode(g, dec);
  } catch (const Error& e) {
    std::cerr << "esf: " << e.what();
    if (e.offset()) std::cerr << " (offset " << *e.offset() << ")";
    std::cerr << "\n";
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "esf: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace esf::cli
