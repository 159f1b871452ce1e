#pragma once

// Online tracking: first-frame fitting, per-frame candidate scoring with the
// top-k mean, reliability-gated re-sampling on camera motion, and short/long
// term classifier updates from sample memories.

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rgbt/data.hpp"
#include "rgbt/geometry.hpp"
#include "rgbt/motion.hpp"
#include "rgbt/network.hpp"

namespace rgbt {

struct FitSchedule {
  int iterations = 10;
  double lr_fc = 0.001;    // fc4, fc5
  double lr_head = 0.01;   // fc6
  int batch_pos = 32;
  int batch_neg = 96;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct TrackerConfig {
  int candidates = 256;
  int top_k = 5;
  GaussianSampler sampler{};

  SampleQuota init_quota{500, 5000, 0.7, 0.5};
  SampleQuota update_quota{50, 200, 0.7, 0.3};
  FitSchedule init_fit{50, 0.0005, 0.005};
  FitSchedule update_fit{10, 0.001, 0.01};
  int short_frames = 20;
  int long_frames = 100;
  int long_interval = 10;

  bool use_bbreg = true;
  int bbreg_samples = 1000;
  double bbreg_iou = 0.6;
  double bbreg_lambda = 1000;
  UniformSampler bbreg_sampler{0.3, 0.6, 1.6};

  bool use_resampling = true;
  double u = 5.0;
  std::string flow = "block";
  bool flow_from_thermal = false;

  bool use_dmc = true;
  double context = 0.0;
  std::uint64_t seed = 0;
};

/// Throws ConfigError for out-of-range settings.
void validate(const TrackerConfig& c);

/// Settings for the compact model on the synthetic benchmark: classifier
/// rates scaled by 100 (patches are in [0, 1], so features are small), 64
/// candidates, smaller sample quotas and 30 first-frame iterations.
TrackerConfig desk_tracker_config();

/// What the tracker needs from the model: features for boxes, scores for
/// features, and fitting of the classifier on cached features.
class TrackerBackend {
 public:
  virtual ~TrackerBackend() = default;
  /// [N, D, 1, 1] features for `boxes` in `frame`.
  virtual Tensor<float> features(const FramePair& frame,
                                 const std::vector<BoundingBox>& boxes) = 0;
  virtual std::vector<ScorePair> scores(const Tensor<float>& features) = 0;
  virtual void fit(const Tensor<float>& pos, const Tensor<float>& neg,
                   const FitSchedule& schedule) = 0;
};

/// The network with frozen convolutions and a fresh single head.
class NetworkBackend : public TrackerBackend {
 public:
  NetworkBackend(const NetworkParams<float>& net, bool use_dmc, double context,
                 std::uint64_t seed);

  Tensor<float> features(const FramePair& frame,
                         const std::vector<BoundingBox>& boxes) override;
  std::vector<ScorePair> scores(const Tensor<float>& features) override;
  void fit(const Tensor<float>& pos, const Tensor<float>& neg,
           const FitSchedule& schedule) override;

  const NetworkParams<float>& network() const { return net_; }

 private:
  NetworkParams<float> net_;
  bool use_dmc_;
  double context_;
  std::mt19937_64 rng_;
};

struct TopK {
  std::vector<int> indices;  // by descending score, ties by lower index
  double mean = 0;
};

/// The k highest scores and their mean (all of them when fewer than k).
TopK select_top_k(const std::vector<double>& scores, int k);

/// Component-wise mean of the boxes at `indices`.
BoundingBox mean_box(const std::vector<BoundingBox>& boxes,
                     const std::vector<int>& indices);

struct MemoryFrame {
  Tensor<float> pos;
  Tensor<float> neg;
};

/// FIFO of per-frame sample features.
class SampleMemory {
 public:
  explicit SampleMemory(int capacity = 1) : capacity_(capacity) {}
  void push(MemoryFrame f);
  int size() const { return static_cast<int>(frames_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<MemoryFrame>& frames() const { return frames_; }
  Tensor<float> positives() const;
  Tensor<float> negatives() const;

 private:
  int capacity_;
  std::deque<MemoryFrame> frames_;
};

struct StepResult {
  BoundingBox box;
  double score = 0;                // max(F, RF) when re-sampling ran
  double f = 0;                    // mean of the top-k Gaussian scores
  std::optional<double> rf;        // top re-sample score
  bool used_resampling = false;    // the re-sampled box won
  bool flow_computed = false;
  MotionDecision motion;
  bool short_update = false;
  bool long_update = false;
};

struct TrackerState {
  BoundingBox last_box;
  int frame_index = 0;  // 0 is the initial frame
  SampleMemory short_mem;
  SampleMemory long_mem;
  BoxRegressor regressor;
  GrayImage prev_gray;
};

class Tracker {
 public:
  Tracker(TrackerConfig config, std::unique_ptr<TrackerBackend> backend,
          std::unique_ptr<FlowEstimator> flow = nullptr);

  /// Throws std::invalid_argument when gt does not overlap the image and
  /// TrainingError when the first-frame samples are degenerate.
  void init(const FramePair& first, const BoundingBox& gt);
  StepResult step(const FramePair& frame);

  void update_short();
  void update_long();

  const TrackerState& state() const { return state_; }
  const TrackerConfig& config() const { return config_; }
  const FlowEstimator& flow() const { return *flow_; }
  int short_updates() const { return short_updates_; }
  int long_updates() const { return long_updates_; }

 private:
  MemoryFrame draw_memory(const FramePair& frame, const BoundingBox& box);
  GrayImage gray_of(const FramePair& frame) const;

  TrackerConfig config_;
  std::unique_ptr<TrackerBackend> backend_;
  std::unique_ptr<FlowEstimator> flow_;
  TrackerState state_;
  std::mt19937_64 rng_;
  bool initialized_ = false;
  int short_updates_ = 0;
  int long_updates_ = 0;
};

struct TrackResult {
  std::vector<BoundingBox> boxes;  // one per frame, the first is the gt
  std::vector<StepResult> steps;   // one per frame after the first
  long flow_calls = 0;
};

/// Runs the tracker over a whole sequence from its first ground-truth box.
TrackResult track_sequence(const RgbtSequence& seq,
                           const NetworkParams<float>& net,
                           const TrackerConfig& config);

/// `x,y,w,h` per line, plus a sidecar CSV with per-frame F, RF and flags.
void write_track_result(const TrackResult& r, const std::string& result_path,
                        const std::string& sidecar_path);

}  // namespace rgbt
