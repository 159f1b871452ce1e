#pragma once

// The desk-scale synthetic benchmark: fixed train / test sequence sets, the
// compact model and its training recipe, with trained models cached on disk.

#include <cstdint>
#include <string>
#include <vector>

#include "rgbt/data.hpp"
#include "rgbt/network.hpp"
#include "rgbt/tracker.hpp"
#include "rgbt/trainer.hpp"

namespace rgbt {

struct DeskBenchmark {
  int test_count = 20;   // first half camera motion, second half degradation
  int train_count = 8;
  int length = 40;
  std::uint64_t test_seed = 7;
  std::uint64_t train_seed = 101;
  ModelConfig model = compact_model_config();
  TrainConfig train = desk_train_config();
  TrackerConfig tracker = desk_tracker_config();
};

std::vector<RgbtSequence> desk_train_set(const DeskBenchmark& b);
std::vector<RgbtSequence> desk_test_set(const DeskBenchmark& b);

/// Sequences carrying `tag`.
std::vector<RgbtSequence> with_attribute(const std::vector<RgbtSequence>& data,
                                         const std::string& tag);

/// Loads `cache_path` when it was trained with identical settings,
/// otherwise trains on the train set and writes the cache. An empty path
/// disables caching.
NetworkParams<float> desk_model(const DeskBenchmark& b, bool use_dmc,
                                const std::string& cache_path);

}  // namespace rgbt
