#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rgbt/checkpoint.hpp"
#include "rgbt/errors.hpp"
#include "rgbt/evaluation.hpp"
#include "rgbt/parallel.hpp"
#include "rgbt/run_config.hpp"

using namespace rgbt;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<bool> dmc;
  std::optional<bool> rs;
  std::optional<std::string> gate_mode;
  std::optional<double> u;
  int workers = 1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool components) {
  sub->add_option("--config", c.config, "run configuration (JSON)");
  sub->add_option("--seed", c.seed, "seed override for this command");
  if (components) {
    sub->add_flag("--dmc,!--no-dmc", c.dmc, "mutual-condition block on/off");
    sub->add_flag("--rs,!--no-rs", c.rs, "re-sampling on/off");
    sub->add_option("--gate-mode", c.gate_mode, "literal or gated_residual")
        ->check(CLI::IsMember({"literal", "gated_residual"}));
    sub->add_option("--u", c.u, "camera-motion threshold in pixels");
  }
}

void add_workers(CLI::App* sub, Common& c) {
  sub->add_option("--workers", c.workers, "sequences tracked in parallel")
      ->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c, const std::string& command) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) {
    if (command == "train") rc.seeds.train = *c.seed;
    else if (command == "synth") rc.seeds.synth = *c.seed;
    else rc.seeds.track = *c.seed;
  }
  rc.trainer.seed = rc.seeds.train;
  rc.tracker.seed = rc.seeds.track;
  if (c.dmc) {
    rc.model.use_dmc = *c.dmc;
    rc.tracker.use_dmc = *c.dmc;
  }
  if (c.rs) rc.tracker.use_resampling = *c.rs;
  if (c.gate_mode) rc.model.gate_mode = parse_gate_mode(*c.gate_mode);
  if (c.u) rc.tracker.u = *c.u;
  validate(rc.model);
  validate(rc.trainer);
  validate(rc.tracker);
  return rc;
}

RunManifest manifest_for(const std::string& command, const Common& c, const RunConfig& rc,
                         std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_path = c.config;
  m.config = to_json_string(rc);
  m.seed = seed;
  m.dmc = command == "train" ? rc.model.use_dmc : rc.tracker.use_dmc;
  m.rs = rc.tracker.use_resampling;
  m.gate_mode = to_string(rc.model.gate_mode);
  m.u = rc.tracker.u;
  m.started = timestamp_now();
  m.code_version = code_version();
  return m;
}

std::vector<RgbtSequence> load_inputs(const std::string& data,
                                      const std::vector<std::string>& seqs,
                                      const std::string& layout) {
  const Layout l = parse_layout(layout);
  std::vector<RgbtSequence> out;
  if (!data.empty()) {
    if (!fs::is_directory(data)) throw LoadError(data + ": no such directory");
    out = load_dataset(data, l);
  }
  for (const auto& s : seqs) {
    if (!fs::is_directory(s)) throw LoadError(s + ": no such directory");
    out.push_back(load_sequence(s, l));
  }
  if (out.empty()) throw LoadError("no sequences found");
  return out;
}

NetworkParams<float> load_model(const std::string& path, const RunConfig& rc,
                                const Common& c) {
  if (!fs::exists(path)) throw LoadError(path + ": no such file");
  auto net = load_checkpoint<float>(path);
  if (c.gate_mode) net.config.gate_mode = rc.model.gate_mode;
  return net;
}

void print_report(const EvalReport& r) {
  std::printf("PR=%.3f SR=%.3f\n", r.pr_at, r.sr_auc);
  for (const auto& [tag, m] : r.per_attribute)
    std::printf("  %-4s PR=%.3f SR=%.3f (%d sequences)\n", tag.c_str(), m.pr, m.sr,
                m.sequences);
  for (const auto& w : r.warnings) std::fprintf(stderr, "note: %s\n", w.c_str());
}

std::vector<RgbtSequence> with_tag(std::vector<RgbtSequence> data, const std::string& tag) {
  if (tag.empty()) return data;
  std::vector<RgbtSequence> out;
  for (auto& s : data)
    if (s.attributes.count(tag)) out.push_back(std::move(s));
  if (out.empty()) throw LoadError("no sequence carries tag " + tag);
  return out;
}

void write_report(const EvalReport& r, const EvalOptions& opt, const std::string& dir,
                  const std::string& name) {
  write_curves_csv(dir + "/pr_curve.csv", dir + "/sr_curve.csv", {{name, r}}, opt);
  nlohmann::json j;
  j["pr"] = r.pr_at;
  j["sr"] = r.sr_auc;
  j["frames"] = r.frames;
  for (const auto& [tag, m] : r.per_attribute)
    j["per_attribute"][tag] = {{"pr", m.pr}, {"sr", m.sr}, {"sequences", m.sequences}};
  j["warnings"] = r.warnings;
  std::ofstream(dir + "/report.json") << j.dump(2) << '\n';
}

PlotSeries pr_series(const std::string& name, const EvalReport& r) {
  PlotSeries s{name, {}, r.pr_curve};
  for (std::size_t i = 0; i < r.pr_curve.size(); ++i) s.x.push_back(static_cast<double>(i));
  return s;
}

PlotSeries sr_series(const std::string& name, const EvalReport& r) {
  PlotSeries s{name, {}, r.sr_curve};
  for (std::size_t i = 0; i < r.sr_curve.size(); ++i)
    s.x.push_back(static_cast<double>(i) / (r.sr_curve.size() - 1));
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-thermal tracking with mutual-condition fusion"};
  app.require_subcommand(1);

  Common common;
  std::string data, layout = "rgbt234", model, plain_model, pretrained, spec_path, subset;
  std::vector<std::string> seqs, results, variants;
  bool force = false, gtot = false, per_sequence = false, u_sweep_flag = false;
  int count = 20, length = 60;

  auto* train_cmd = app.add_subcommand("train", "offline multi-domain training");
  add_common(train_cmd, common, true);
  train_cmd->add_option("--data", data, "dataset root")->required();
  train_cmd->add_option("--layout", layout)->check(CLI::IsMember({"rgbt234", "gtot"}));
  train_cmd->add_option("--pretrained", pretrained, "backbone checkpoint");
  train_cmd->add_option("--out", common.out, "checkpoint to write")->required();

  auto* track_cmd = app.add_subcommand("track", "track sequences with a trained model");
  add_common(track_cmd, common, true);
  add_workers(track_cmd, common);
  track_cmd->add_option("--model", model, "trained checkpoint")->required();
  track_cmd->add_option("--data", data, "dataset root");
  track_cmd->add_option("--seq", seqs, "sequence directory (repeatable)");
  track_cmd->add_option("--layout", layout)->check(CLI::IsMember({"rgbt234", "gtot"}));
  track_cmd->add_option("--out", common.out, "result directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "precision / success of result files");
  add_common(eval_cmd, common, false);
  eval_cmd->add_option("--data", data, "dataset root");
  eval_cmd->add_option("--seq", seqs, "sequence directory (repeatable)");
  eval_cmd->add_option("--layout", layout)->check(CLI::IsMember({"rgbt234", "gtot"}));
  eval_cmd->add_option("--results", results, "result directory (repeatable)")->required();
  eval_cmd->add_flag("--gtot", gtot, "5 px precision threshold");
  eval_cmd->add_flag("--per-sequence", per_sequence, "mean of per-sequence metrics");
  eval_cmd->add_flag("--force", force, "accept results from differing runs");
  eval_cmd->add_option("--out", common.out, "report directory");
  add_workers(eval_cmd, common);

  auto* synth_cmd = app.add_subcommand("synth", "write synthetic sequences");
  add_common(synth_cmd, common, false);
  synth_cmd->add_option("--spec", spec_path, "single sequence spec (JSON)");
  synth_cmd->add_option("--count", count, "benchmark sequences")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--length", length, "frames per sequence")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", common.out, "dataset root")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "component ablation or u sweep");
  add_common(ablate_cmd, common, true);
  add_workers(ablate_cmd, common);
  ablate_cmd->add_option("--model", model, "model trained with the block")->required();
  ablate_cmd->add_option("--plain-model", plain_model, "model trained without it");
  ablate_cmd->add_option("--data", data, "dataset root");
  ablate_cmd->add_option("--seq", seqs, "sequence directory (repeatable)");
  ablate_cmd->add_option("--layout", layout)->check(CLI::IsMember({"rgbt234", "gtot"}));
  ablate_cmd->add_option("--variants", variants, "subset of v1 v2 v3 full")->delimiter(',');
  ablate_cmd->add_option("--subset", subset, "only sequences with this tag");
  ablate_cmd->add_flag("--u-sweep", u_sweep_flag, "sweep u over 0..30 instead");
  ablate_cmd->add_flag("--gtot", gtot, "5 px precision threshold");
  ablate_cmd->add_option("--out", common.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      const RunConfig rc = resolve(common, "train");
      RunManifest m = manifest_for("train", common, rc, rc.seeds.train);
      const auto train_data = load_inputs(data, {}, layout);
      if (!pretrained.empty() && !fs::exists(pretrained))
        throw LoadError(pretrained + ": no such file");
      TrainConfig tc = rc.trainer;
      if (tc.log_path.empty()) tc.log_path = common.out + ".log.csv";
      const auto net = train(train_data, rc.model, pretrained, tc);
      save_checkpoint(net, common.out);
      m.inputs = {data};
      m.outputs = {common.out, tc.log_path};
      m.finished = timestamp_now();
      write_manifest(m, common.out + ".manifest.json");
      std::printf("trained %zu domains -> %s\n", train_data.size(), common.out.c_str());
    } else if (*track_cmd) {
      const RunConfig rc = resolve(common, "track");
      RunManifest m = manifest_for("track", common, rc, rc.seeds.track);
      const auto net = load_model(model, rc, common);
      m.gate_mode = to_string(net.config.gate_mode);
      const auto input = load_inputs(data, seqs, layout);
      fs::create_directories(common.out);
      const auto tracks = track_all(input, net, rc.tracker, common.workers);
      m.inputs = {model};
      for (std::size_t i = 0; i < input.size(); ++i) {
        const std::string base = common.out + "/" + input[i].name;
        write_track_result(tracks[i], base + ".txt", base + "_meta.csv");
        m.inputs.push_back(input[i].name);
        m.outputs.push_back(base + ".txt");
      }
      m.finished = timestamp_now();
      write_manifest(m, common.out + "/manifest.json");
      std::printf("tracked %zu sequences -> %s\n", input.size(), common.out.c_str());
    } else if (*eval_cmd) {
      const auto input = load_inputs(data, seqs, layout);
      std::optional<RunManifest> first;
      for (const auto& dir : results) {
        const std::string mp = dir + "/manifest.json";
        if (!fs::exists(mp)) {
          if (!force) throw LoadError(dir + ": no run manifest (use --force)");
          continue;
        }
        const RunManifest m = read_manifest(mp);
        if (!first) first = m;
        else if (!same_setup(*first, m) && !force)
          throw LoadError(dir + ": results come from a different run setup (use --force)");
      }
      std::vector<SequenceResult> res(input.size());
      parallel_for(static_cast<int>(input.size()), common.workers, [&](int i) {
        const auto& s = input[i];
        std::optional<std::vector<BoundingBox>> boxes;
        for (const auto& dir : results) {
          const std::string p = dir + "/" + s.name + ".txt";
          if (fs::exists(p)) {
            boxes = read_boxes(p, false);
            break;
          }
        }
        if (!boxes) throw LoadError("no result file for sequence " + s.name);
        res[i] = {s.name, s.attributes, *boxes, s.gt};
      });
      EvalOptions opt = gtot ? gtot_eval_options() : EvalOptions{};
      opt.per_sequence_mean = per_sequence;
      const EvalReport r = attribute_report(res, opt);
      print_report(r);
      if (!common.out.empty()) {
        fs::create_directories(common.out);
        write_report(r, opt, common.out, "result");
        plot_lines(common.out + "/precision.png", "Precision", "center error (px)",
                   "precision", {pr_series("result", r)});
        plot_lines(common.out + "/success.png", "Success", "overlap threshold", "success",
                   {sr_series("result", r)});
      }
    } else if (*synth_cmd) {
      const RunConfig rc = resolve(common, "synth");
      RunManifest m = manifest_for("synth", common, rc, rc.seeds.synth);
      std::vector<SynthSpec> specs;
      if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw LoadError(spec_path + ": cannot open");
        std::stringstream ss;
        ss << in.rdbuf();
        specs.push_back(synth_spec_from_json(ss.str()));
        m.inputs = {spec_path};
      } else {
        specs = benchmark_specs(count, rc.seeds.synth, length);
      }
      fs::create_directories(common.out);
      for (const auto& s : specs) {
        const std::string dir = common.out + "/" + s.name;
        save_sequence(synth_generate(s), dir);
        std::ofstream(dir + "/spec.json") << to_json_string(s) << '\n';
        m.outputs.push_back(dir);
      }
      m.finished = timestamp_now();
      write_manifest(m, common.out + "/manifest.json");
      std::printf("wrote %zu sequences -> %s\n", specs.size(), common.out.c_str());
    } else if (*ablate_cmd) {
      const RunConfig rc = resolve(common, "ablate");
      RunManifest m = manifest_for("ablate", common, rc, rc.seeds.track);
      const auto dmc_net = load_model(model, rc, common);
      const auto plain_net =
          plain_model.empty() ? dmc_net : load_model(plain_model, rc, common);
      const auto input = with_tag(load_inputs(data, seqs, layout), subset);
      const EvalOptions opt = gtot ? gtot_eval_options() : EvalOptions{};
      fs::create_directories(common.out);
      std::vector<AblationRow> rows;
      std::string stem;
      if (u_sweep_flag) {
        stem = "u_sweep";
        rows = u_sweep(input, dmc_net, rc.tracker, default_u_grid(), opt, common.workers);
        PlotSeries pr{"PR", {}, {}}, sr{"SR", {}, {}};
        for (const auto& r : rows) {
          pr.x.push_back(r.u);
          pr.y.push_back(r.report.pr_at);
          sr.x.push_back(r.u);
          sr.y.push_back(r.report.sr_auc);
        }
        plot_lines(common.out + "/u_sweep.png", "Threshold u", "u (px)", "score", {pr, sr});
      } else {
        stem = "ablation";
        std::vector<VariantSpec> vs;
        if (variants.empty()) vs = ablation_variants();
        for (const auto& v : variants) vs.push_back(find_variant(v));
        rows = ablation_run(input, dmc_net, plain_net, rc.tracker, vs, opt, common.workers);
      }
      write_rows_csv(common.out + "/" + stem + ".csv", rows);
      std::vector<std::pair<std::string, EvalReport>> named;
      std::vector<PlotSeries> prs, srs;
      for (const auto& r : rows) {
        named.emplace_back(r.variant, r.report);
        prs.push_back(pr_series(r.variant, r.report));
        srs.push_back(sr_series(r.variant, r.report));
        std::printf("%-6s u=%-4g PR=%.3f SR=%.3f\n", r.variant.c_str(), r.u, r.report.pr_at,
                    r.report.sr_auc);
      }
      write_curves_csv(common.out + "/" + stem + "_pr.csv", common.out + "/" + stem + "_sr.csv",
                       named, opt);
      plot_lines(common.out + "/" + stem + "_precision.png", "Precision", "center error (px)",
                 "precision", prs);
      plot_lines(common.out + "/" + stem + "_success.png", "Success", "overlap threshold",
                 "success", srs);
      m.inputs = {model, plain_model};
      m.outputs = {common.out + "/" + stem + ".csv"};
      m.finished = timestamp_now();
      write_manifest(m, common.out + "/manifest.json");
    }
  } catch (const LoadError& e) {
    std::fprintf(stderr, "rgbt: %s\n", e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "rgbt: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rgbt: %s\n", e.what());
    return 1;
  }
  return 0;
}
