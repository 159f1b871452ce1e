#include "rgbt/desk.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rgbt/checkpoint.hpp"
#include "rgbt/errors.hpp"
#include "rgbt/run_config.hpp"

namespace rgbt {

namespace {

std::vector<RgbtSequence> generate(const std::vector<SynthSpec>& specs) {
  std::vector<RgbtSequence> out;
  for (const auto& s : specs) out.push_back(synth_generate(s));
  return out;
}

std::string settings_of(const DeskBenchmark& b, bool use_dmc) {
  RunConfig rc;
  rc.model = b.model;
  rc.model.use_dmc = use_dmc;
  rc.trainer = b.train;
  rc.seeds.train = b.train.seed;
  std::ostringstream os;
  os << to_json_string(rc) << "\ntrain_count " << b.train_count << "\nlength " << b.length
     << "\ntrain_seed " << b.train_seed << '\n';
  return os.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<RgbtSequence> desk_train_set(const DeskBenchmark& b) {
  auto specs = benchmark_specs(b.train_count, b.train_seed, b.length);
  for (auto& s : specs) s.name = "train_" + s.name;
  return generate(specs);
}

std::vector<RgbtSequence> desk_test_set(const DeskBenchmark& b) {
  return generate(benchmark_specs(b.test_count, b.test_seed, b.length));
}

std::vector<RgbtSequence> with_attribute(const std::vector<RgbtSequence>& data,
                                         const std::string& tag) {
  std::vector<RgbtSequence> out;
  for (const auto& s : data)
    if (s.attributes.count(tag)) out.push_back(s);
  return out;
}

NetworkParams<float> desk_model(const DeskBenchmark& b, bool use_dmc,
                                const std::string& cache_path) {
  const std::string settings = settings_of(b, use_dmc);
  const std::string stamp = cache_path + ".settings";
  if (!cache_path.empty() && std::filesystem::exists(cache_path) &&
      std::filesystem::exists(stamp) && slurp(stamp) == settings) {
    try {
      return load_checkpoint<float>(cache_path);
    } catch (const LoadError&) {
    }
  }
  ModelConfig m = b.model;
  m.use_dmc = use_dmc;
  auto net = train(desk_train_set(b), m, "", b.train);
  if (!cache_path.empty()) {
    save_checkpoint(net, cache_path);
    std::ofstream(stamp) << settings;
  }
  return net;
}

}  // namespace rgbt
