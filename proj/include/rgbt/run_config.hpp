#pragma once

// Run configuration files (JSON with sections model, sampler, tracker,
// trainer, u, seeds) and the manifest written next to every run's outputs.

#include <cstdint>
#include <string>
#include <vector>

#include "rgbt/data.hpp"
#include "rgbt/network.hpp"
#include "rgbt/tracker.hpp"
#include "rgbt/trainer.hpp"

namespace rgbt {

struct Seeds {
  std::uint64_t train = 0;
  std::uint64_t track = 0;
  std::uint64_t synth = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig trainer;
  TrackerConfig tracker;  // tracker.sampler and tracker.u carry the
                          // "sampler" and "u" sections
  Seeds seeds;
};

/// Keys not listed in the README are rejected with ConfigError. Missing
/// keys keep their defaults. A section may name a preset:
/// model {"preset": "compact"}, tracker {"preset": "desk"}.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string to_json_string(const RunConfig& c);

SynthSpec synth_spec_from_json(const std::string& text);
std::string to_json_string(const SynthSpec& s);

std::string code_version();

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config;  // effective configuration, JSON
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  bool dmc = true;
  bool rs = true;
  std::string gate_mode = "literal";
  double u = 5;
  std::string started;
  std::string finished;
  std::string code_version;
};

/// UTC, ISO 8601.
std::string timestamp_now();

void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

/// True when both describe the same configuration (everything except
/// paths and timestamps).
bool same_setup(const RunManifest& a, const RunManifest& b);

}  // namespace rgbt
