#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "rgbt/checkpoint.hpp"
#include "rgbt/errors.hpp"
#include "rgbt/run_config.hpp"
#include "support.hpp"

using namespace rgbt;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, bool merge_stderr = true) {
  const std::string cmd =
      std::string(RGBT_CLI) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rgbt_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny model, small quotas, a few training iterations.
std::string tiny_run_config() {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(to_json_string(test::tiny_model_config()));
  j["tracker"] = {{"candidates", 32},
                  {"init_quota", {{"positives", 20}, {"negatives", 40}}},
                  {"update_quota", {{"positives", 5}, {"negatives", 10}}},
                  {"bbreg_samples", 30}};
  j["trainer"] = {{"iterations", 3}, {"frames_per_batch", 2}};
  j["seeds"] = {{"track", 3}};
  return j.dump();
}

// Two short synthetic sequences, a config and an untrained tiny model.
struct Fixture {
  fs::path dir;
  fs::path data;
  fs::path config;
  fs::path model;

  explicit Fixture(const std::string& name) : dir(scratch(name)) {
    data = dir / "data";
    config = dir / "run.json";
    model = dir / "tiny.ckpt";
    std::ofstream(config) << tiny_run_config();
    for (int i = 0; i < 2; ++i) {
      SynthSpec s;
      s.name = "seq" + std::to_string(i);
      s.length = 5;
      s.seed = 10 + i;
      if (i == 0) s.camera_events = {{2, 14, 0}};
      std::ofstream(dir / (s.name + ".json")) << to_json_string(s);
      REQUIRE(run("synth --spec " + (dir / (s.name + ".json")).string() + " --out " +
                  data.string())
                  .code == 0);
    }
    save_checkpoint(build_network<float>(test::tiny_model_config(), 1, 2), model.string());
  }
};

}  // namespace

TEST_CASE("run config parsing") {
  const RunConfig d = run_config_from_json("{}");
  CHECK(d.tracker.u == 5.0);
  CHECK(d.tracker.candidates == 256);
  CHECK(d.model.input_size == 107);
  CHECK(d.trainer.lr_backbone_fc == 0.001);

  const RunConfig c = run_config_from_json(
      R"({"model": {"preset": "compact", "fc_width": 64},
          "tracker": {"preset": "desk", "short_frames": 12, "init_fit": {"iterations": 7}},
          "trainer": {"lr_override": {"dmc": 0.5}},
          "sampler": {"center_std": 0.4}, "u": 9, "seeds": {"track": 4, "train": 8}})");
  CHECK(c.model.input_size == 75);
  CHECK(c.model.fc_width == 64);
  CHECK(c.tracker.short_frames == 12);
  CHECK(c.tracker.init_fit.iterations == 7);
  CHECK(c.tracker.init_fit.lr_fc == desk_tracker_config().init_fit.lr_fc);
  CHECK(c.tracker.sampler.center_std == 0.4);
  CHECK(c.tracker.u == 9);
  CHECK(c.tracker.seed == 4);
  CHECK(c.trainer.seed == 8);
  CHECK(c.trainer.lr_override.at("dmc") == 0.5);

  const RunConfig back = run_config_from_json(to_json_string(c));
  CHECK(to_json_string(back) == to_json_string(c));

  CHECK_THROWS_AS(run_config_from_json(R"({"tracker": {"candidatez": 3}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"tracker": {"init_fit": {"lr": 3}}})"),
                  ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"extra": 1})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"u": -1})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"model": {"preset": "huge"}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("{"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.json"), LoadError);

  const RunConfig desk = load_run_config(std::string(RGBT_SOURCE_DIR) + "/tools/configs/desk.json");
  CHECK(desk.model.input_size == 75);
  CHECK(desk.tracker.candidates == desk_tracker_config().candidates);
  CHECK(desk.trainer.iterations == desk_train_config().iterations);
  CHECK(desk.seeds.synth == 7);
}

TEST_CASE("synth spec and manifest round trips") {
  SynthSpec s;
  s.camera_events = {{5, 12, -3}};
  s.low_light = {{10, 20}};
  s.name = "x";
  CHECK(to_json_string(synth_spec_from_json(to_json_string(s))) == to_json_string(s));
  CHECK_THROWS_AS(synth_spec_from_json(R"({"length": 10, "camera_events": [{"frame": 50}]})"),
                  ConfigError);

  const fs::path dir = scratch("manifest");
  RunManifest m;
  m.command = "track";
  m.config = "{}";
  m.inputs = {"a", "b"};
  m.u = 7.5;
  m.started = timestamp_now();
  write_manifest(m, (dir / "m.json").string());
  const RunManifest r = read_manifest((dir / "m.json").string());
  CHECK(r.inputs == m.inputs);
  CHECK(r.u == 7.5);
  CHECK(same_setup(m, r));
  RunManifest other = r;
  other.started = "later";
  other.outputs = {"elsewhere"};
  CHECK(same_setup(m, other));
  other.rs = false;
  CHECK_FALSE(same_setup(m, other));
}

TEST_CASE("usage errors exit 2, missing inputs exit 1") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("track --bogus").code == 2);
  CHECK(run("track --model m").code == 2);
  CHECK(run("track --gate-mode sideways --model m --out o").code == 2);
  CHECK(run("--help").code == 0);

  const fs::path dir = scratch("missing");
  const Run r = run("eval --data /nonexistent/data --results " + dir.string());
  CHECK(r.code == 1);
  CHECK(r.out.find("/nonexistent/data") != std::string::npos);
  CHECK(run("track --model /nonexistent.ckpt --seq " + dir.string() + " --out " +
            (dir / "o").string())
            .code == 1);
}

TEST_CASE("eval on perfect tracking") {
  Fixture f("perfect");
  const fs::path res = f.dir / "perfect";
  fs::create_directories(res);
  for (const auto* name : {"seq0", "seq1"})
    fs::copy_file(f.data / name / "visible.txt", res / (std::string(name) + ".txt"));
  RunManifest m;
  m.command = "track";
  write_manifest(m, (res / "manifest.json").string());

  const Run r = run("eval --workers 2 --data " + f.data.string() + " --results " + res.string() +
                    " --out " + (f.dir / "report").string(),
                    false);
  CHECK(r.code == 0);
  CHECK(r.out.rfind("PR=1.000 SR=1.000\n", 0) == 0);
  CHECK(fs::exists(f.dir / "report" / "precision.png"));
  CHECK(fs::exists(f.dir / "report" / "report.json"));

  fs::remove(res / "manifest.json");
  CHECK(run("eval --data " + f.data.string() + " --results " + res.string()).code == 1);
  CHECK(run("eval --force --data " + f.data.string() + " --results " + res.string()).code == 0);
}

TEST_CASE("track is reproducible and eval refuses mixed runs") {
  Fixture f("track");
  const std::string common =
      " --model " + f.model.string() + " --data " + f.data.string() + " --config " +
      f.config.string();
  const fs::path a = f.dir / "a", b = f.dir / "b", c = f.dir / "c";
  REQUIRE(run("track" + common + " --out " + a.string()).code == 0);
  REQUIRE(run("track" + common + " --workers 2 --out " + b.string()).code == 0);
  for (const auto* name : {"seq0.txt", "seq0_meta.csv", "seq1.txt", "seq1_meta.csv"}) {
    CHECK(fs::exists(a / name));
    CHECK(slurp(a / name) == slurp(b / name));
  }
  CHECK(fs::exists(a / "manifest.json"));

  REQUIRE(run("track" + common + " --no-rs --u 9 --out " + c.string()).code == 0);
  const RunManifest mc = read_manifest((c / "manifest.json").string());
  CHECK_FALSE(mc.rs);
  CHECK(mc.u == 9);

  const std::string ev = "eval --data " + f.data.string() + " --results ";
  CHECK(run(ev + a.string() + " --results " + b.string()).code == 0);
  const Run mixed = run(ev + a.string() + " --results " + c.string());
  CHECK(mixed.code == 1);
  CHECK(mixed.out.find("different run") != std::string::npos);
  CHECK(run(ev + a.string() + " --results " + c.string() + " --force").code == 0);
}

TEST_CASE("train, synth benchmark and u sweep") {
  Fixture f("train");
  const fs::path ck = f.dir / "trained.ckpt";
  const Run t = run("train --data " + f.data.string() + " --config " + f.config.string() +
                    " --out " + ck.string());
  CHECK(t.code == 0);
  CHECK(fs::exists(ck));
  CHECK(fs::exists(f.dir / "trained.ckpt.manifest.json"));
  CHECK(load_checkpoint<float>(ck.string()).heads.size() == 1);

  const Run s = run("synth --count 4 --length 6 --seed 2 --out " + (f.dir / "bench").string());
  CHECK(s.code == 0);
  CHECK(fs::exists(f.dir / "bench" / "cm_0" / "spec.json"));

  const fs::path out = f.dir / "sweep";
  const Run u = run("ablate --u-sweep --model " + f.model.string() + " --data " +
                    f.data.string() + " --config " + f.config.string() + " --out " +
                    out.string());
  CHECK(u.code == 0);
  const std::string csv = slurp(out / "u_sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  CHECK(fs::exists(out / "u_sweep.png"));

  const Run v = run("ablate --variants v1,full --model " + f.model.string() + " --data " +
                    f.data.string() + " --config " + f.config.string() + " --out " +
                    (f.dir / "abl").string());
  CHECK(v.code == 0);
  const std::string abl = slurp(f.dir / "abl" / "ablation.csv");
  CHECK(std::count(abl.begin(), abl.end(), '\n') == 3);
  CHECK(run("ablate --variants v7 --model " + f.model.string() + " --data " +
            f.data.string() + " --out " + (f.dir / "bad").string())
            .code == 1);
}
