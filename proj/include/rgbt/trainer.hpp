#pragma once

// Offline multi-domain training: mini-batch construction, the softmax loss,
// SGD with per-group learning rates, and the domain-cycling loop.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rgbt/data.hpp"
#include "rgbt/geometry.hpp"
#include "rgbt/network.hpp"

namespace rgbt {

struct TrainConfig {
  int epochs = 200;
  int iterations = 0;  // 0: epochs * number of sequences
  double lr_backbone_fc = 0.001;
  double lr_adapter_dmc = 0.002;
  std::map<std::string, double> lr_override;  // group name -> rate
  int frames_per_batch = 8;
  int pos_per_batch = 32;
  int neg_per_batch = 96;
  bool per_frame_quota = false;  // quotas apply to every frame
  double pos_thr = 0.7;
  double neg_thr = 0.5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double context = 0.0;
  UniformSampler pos_sampler{0.1, 0.95, 1.05};
  UniformSampler neg_sampler{};
  double global_neg_fraction = 0.5;
  std::uint64_t seed = 0;
  std::string log_path;  // CSV iteration,domain,loss; empty disables
};

/// Recipe for the compact model on the synthetic benchmark: rates scaled
/// by 10 and 200 iterations.
TrainConfig desk_train_config();

/// Throws ConfigError for inconsistent thresholds or quotas.
void validate(const TrainConfig& c);

/// Learning rate per ParamGroup (indexed by the enum value).
std::array<double, 5> group_rates(const TrainConfig& c);

struct MiniBatch {
  Tensor<float> rgb;  // [N, 3, S, S]
  Tensor<float> t;
  std::vector<int> labels;  // 1 positive, 0 negative
  std::vector<BoundingBox> boxes;
  std::vector<int> frames;
};

/// Positives first, then negatives. Sequences shorter than the frame count
/// are sampled with replacement. Throws TrainingError when the quotas cannot
/// be met.
MiniBatch build_minibatch(const RgbtSequence& seq, const TrainConfig& c,
                          int input_size, std::mt19937_64& rng);

/// Mean binary softmax cross-entropy over [N, 2, 1, 1] logits (channel 0 the
/// positive class). Writes d loss / d logits when `grad` is non-null.
template <typename T>
double softmax_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                    Tensor<T>* grad);

/// SGD with momentum and decoupled per-group rates. A zero rate leaves the
/// parameter untouched, weight decay included.
template <typename T>
class Sgd {
 public:
  Sgd(std::array<double, 5> rates, double momentum, double weight_decay)
      : rates_(rates), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Param<T>*>& params);
  double rate(ParamGroup g) const { return rates_[static_cast<int>(g)]; }
  void set_rates(std::array<double, 5> r) { rates_ = r; }

 private:
  std::array<double, 5> rates_;
  double momentum_;
  double weight_decay_;
  std::unordered_map<const Param<T>*, Tensor<T>> velocity_;
};

/// Trunk parameters plus the single head of `domain`.
template <typename T>
std::vector<Param<T>*> domain_parameters(NetworkParams<T>& net, int domain);

struct TrainProgress {
  int iteration = 0;
  int domain = 0;
  double loss = 0;
};

/// Trains `net` in place, one sequence (domain) per iteration with its own
/// head. `net` must have one head per sequence; on return the heads are
/// replaced by a single fresh one. Throws std::invalid_argument for an empty
/// dataset.
void train(NetworkParams<float>& net, const std::vector<RgbtSequence>& data,
           const TrainConfig& c,
           const std::function<void(const TrainProgress&)>& on_step = {});

/// Builds a network for `data`, optionally loading a pretrained backbone,
/// and trains it.
NetworkParams<float> train(const std::vector<RgbtSequence>& data,
                           const ModelConfig& model,
                           const std::string& pretrained_path,
                           const TrainConfig& c);

}  // namespace rgbt
