#include "rgbt/run_config.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rgbt/errors.hpp"

#ifndef RGBT_CODE_VERSION
#define RGBT_CODE_VERSION "unknown"
#endif

namespace rgbt {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GaussianSampler, center_std, scale_std,
                                                scale_base)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UniformSampler, translation, scale_min,
                                                scale_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SampleQuota, positives, negatives, pos_thr,
                                                neg_thr, pos_sampler, neg_sampler,
                                                global_neg_fraction, max_rounds)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FitSchedule, iterations, lr_fc, lr_head,
                                                batch_pos, batch_neg, momentum,
                                                weight_decay)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrackerConfig, candidates, top_k,
                                                init_quota, update_quota, init_fit,
                                                update_fit, short_frames, long_frames,
                                                long_interval, use_bbreg, bbreg_samples,
                                                bbreg_iou, bbreg_lambda, bbreg_sampler,
                                                use_resampling, flow, flow_from_thermal,
                                                use_dmc, context)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, iterations,
                                                lr_backbone_fc, lr_adapter_dmc,
                                                lr_override, frames_per_batch,
                                                pos_per_batch, neg_per_batch,
                                                per_frame_quota, pos_thr, neg_thr,
                                                momentum, weight_decay, context,
                                                pos_sampler, neg_sampler,
                                                global_neg_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Seeds, train, track, synth)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CameraEvent, frame, dx, dy)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Interval, begin, end)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BoundingBox, x, y, w, h)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthSpec, name, length, width, height,
                                                start, vx, vy, scale_rate, camera_events,
                                                low_light, low_light_gain,
                                                low_light_noise, crossover, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunManifest, command, config_path, config,
                                                seed, inputs, outputs, dmc, rs, gate_mode,
                                                u, started, finished, code_version)

namespace {

// Every key of `user` must exist in `ref`; objects are checked recursively
// except free-form maps.
void check_keys(const json& user, const json& ref, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : user.items()) {
    if (!ref.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    if (v.is_object() && ref.at(k).is_object() && k != "lr_override")
      check_keys(v, ref.at(k), where + "." + k);
  }
}

// `base` overlaid with the user's section (minus "preset").
template <typename T>
T section(const json& user, const T& base, const std::string& name) {
  json ref = base;
  json merged = ref;
  json u = user;
  u.erase("preset");
  check_keys(u, ref, name);
  merged.merge_patch(u);
  return merged.get<T>();
}

std::string preset_of(const json& s) {
  return s.contains("preset") ? s.at("preset").get<std::string>() : std::string();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("run config: expected an object");
    for (const auto& [k, v] : j.items()) {
      if (k != "model" && k != "sampler" && k != "tracker" && k != "trainer" && k != "u" &&
          k != "seeds")
        throw ConfigError("run config: unknown key '" + k + "'");
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      if (!m.is_object()) throw ConfigError("model: expected an object");
      const std::string p = preset_of(m);
      ModelConfig base;
      if (p == "compact") base = compact_model_config();
      else if (!p.empty() && p != "default") throw ConfigError("model: unknown preset " + p);
      json merged = json::parse(to_json_string(base));
      json u = m;
      u.erase("preset");
      check_keys(u, merged, "model");
      merged.merge_patch(u);
      c.model = model_config_from_json_string(merged.dump());
    }
    if (j.contains("trainer")) {
      const json& t = j.at("trainer");
      if (!t.is_object()) throw ConfigError("trainer: expected an object");
      const std::string p = preset_of(t);
      TrainConfig base;
      if (p == "desk") base = desk_train_config();
      else if (!p.empty() && p != "default") throw ConfigError("trainer: unknown preset " + p);
      c.trainer = section(t, base, "trainer");
    }
    if (j.contains("tracker")) {
      const json& t = j.at("tracker");
      if (!t.is_object()) throw ConfigError("tracker: expected an object");
      const std::string p = preset_of(t);
      TrackerConfig base;
      if (p == "desk") base = desk_tracker_config();
      else if (!p.empty() && p != "default") throw ConfigError("tracker: unknown preset " + p);
      c.tracker = section(t, base, "tracker");
      c.tracker.sampler = base.sampler;
      c.tracker.u = base.u;
    }
    if (j.contains("sampler")) c.tracker.sampler = section(j.at("sampler"), GaussianSampler{}, "sampler");
    if (j.contains("u")) c.tracker.u = j.at("u").get<double>();
    if (j.contains("seeds")) c.seeds = section(j.at("seeds"), Seeds{}, "seeds");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.tracker.seed = c.seeds.track;
  c.trainer.seed = c.seeds.train;
  validate(c.model);
  validate(c.trainer);
  validate(c.tracker);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return run_config_from_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string to_json_string(const RunConfig& c) {
  json j;
  j["model"] = json::parse(to_json_string(c.model));
  j["trainer"] = c.trainer;
  j["tracker"] = c.tracker;
  j["sampler"] = c.tracker.sampler;
  j["u"] = c.tracker.u;
  j["seeds"] = c.seeds;
  return j.dump(2);
}

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec s;
  try {
    s = section(json::parse(text), SynthSpec{}, "synth");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  validate(s);
  return s;
}

std::string to_json_string(const SynthSpec& s) { return json(s).dump(2); }

std::string code_version() { return RGBT_CODE_VERSION; }

std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const RunManifest& m, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw LoadError(tmp + ": cannot open for writing");
    out << json(m).dump(2) << '\n';
    if (!out) throw LoadError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open");
  try {
    return json::parse(in).get<RunManifest>();
  } catch (const json::exception& e) {
    throw LoadError(path + ": " + e.what());
  }
}

bool same_setup(const RunManifest& a, const RunManifest& b) {
  return a.command == b.command && a.config == b.config && a.seed == b.seed &&
         a.dmc == b.dmc && a.rs == b.rs && a.gate_mode == b.gate_mode && a.u == b.u &&
         a.code_version == b.code_version;
}

}  // namespace rgbt
