#pragma once

// Two-stream RGB/thermal network: a modality-shared three-stage backbone,
// per-modality adapters added in parallel at every stage, an optional
// mutual-condition block after each join, and a three-layer classifier with
// one output head per training domain.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rgbt/dmc.hpp"
#include "rgbt/layers.hpp"

namespace rgbt {

struct BackboneStageSpec {
  int kernel = 3;
  int stride = 1;
  int channels = 1;
  bool lrn = false;
  PoolSpec pool{};
};

struct AdapterStageSpec {
  int kernel = 1;
  int stride = 1;
  PoolSpec pool{};
};

struct ModelConfig {
  int input_size = 107;
  int in_channels = 3;
  std::array<BackboneStageSpec, 3> backbone{{
      {7, 2, 96, true, {3, 2}},
      {5, 2, 256, true, {3, 2}},
      {3, 1, 512, false, {}},
  }};
  std::array<AdapterStageSpec, 3> adapters{{
      {3, 2, {5, 2}},
      {1, 2, {5, 2}},
      {1, 1, {3, 1}},
  }};
  int fc_width = 512;
  double dropout = 0.5;
  LrnSpec lrn{};
  int dmc_bottleneck_ratio = 4;

  // Mutual-condition wiring. use_dmc=false gives the plain two-stream net.
  bool use_dmc = true;
  bool dmc_residual = false;  // add the block output to the join
  GateMode gate_mode = GateMode::literal;
  DmcVariant dmc_variant = DmcVariant::full;

  DmcOptions dmc_options() const { return {gate_mode, dmc_variant}; }
};

/// Spatial size after each stage, from convolution arithmetic.
struct StageGeometry {
  std::array<int, 3> backbone_conv{};
  std::array<int, 3> level{};  // after pooling
  std::array<int, 3> adapter_conv{};
  std::array<int, 3> adapter_level{};
};

StageGeometry stage_geometry(const ModelConfig& c);

/// Throws ConfigError when a stage collapses or adapter and backbone outputs
/// disagree in shape.
void validate(const ModelConfig& c);

/// Width of the fc4 input: 2 * C3 * S3 * S3.
int classifier_input_width(const ModelConfig& c);

/// Small configuration used by the desk-scale benchmark and fast tests.
ModelConfig compact_model_config();

std::string to_json_string(const ModelConfig& c);
ModelConfig model_config_from_json_string(const std::string& s);

struct ScorePair {
  double pos = 0;
  double neg = 0;
};

template <typename T>
struct NetworkParams {
  ModelConfig config;
  std::array<ConvParams<T>, 3> backbone;
  std::array<std::array<ConvParams<T>, 3>, 2> adapter_conv;  // [modality][lvl]
  std::array<std::array<BatchNormParams<T>, 3>, 2> adapter_bn;
  std::array<DmcParams<T>, 3> dmc;
  LinearParams<T> fc4;
  LinearParams<T> fc5;
  std::vector<LinearParams<T>> heads;  // fc6, one per domain

  int num_domains() const { return static_cast<int>(heads.size()); }

  /// Every learnable parameter exactly once, in a stable order.
  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;

  /// Non-learnable state (batch-norm running statistics) by key.
  std::vector<std::pair<std::string, Tensor<T>*>> buffers();
  std::vector<std::pair<std::string, const Tensor<T>*>> buffers() const;

  void zero_grad();

  /// Replaces all heads by `count` freshly initialized ones.
  void reset_heads(int count, std::mt19937_64& rng);

  template <typename U>
  NetworkParams<U> cast() const;
};

template <typename T>
NetworkParams<T> build_network(const ModelConfig& config, int num_domains,
                               std::uint64_t seed);

/// Copies the backbone convolutions from a key->array checkpoint. Missing
/// keys throw LoadError when strict; otherwise they are left initialized.
template <typename T>
void load_pretrained_backbone(NetworkParams<T>& net, const std::string& path,
                              bool strict);

// ---------------------------------------------------------------- forward

struct RunMode {
  bool training = false;  // dropout on, batch-norm batch statistics
  bool use_dmc = true;
};

template <typename T>
struct StageCache {
  Tensor<T> input;
  Tensor<T> b_relu;
  LrnCache<T> lrn;
  PoolCache b_pool;
  Tensor<T> a_relu;
  BatchNormCache<T> bn;
  Tensor<T> a_mask;
  PoolCache a_pool;
};

template <typename T>
struct FeatureCache {
  std::array<std::array<StageCache<T>, 3>, 2> stage;  // [modality][level]
  std::array<DmcCache<T>, 3> dmc;
};

template <typename T>
struct ClassifierCache {
  Tensor<T> x;
  Tensor<T> h4;
  Tensor<T> m4;
  Tensor<T> h4d;
  Tensor<T> h5;
  Tensor<T> m5;
  Tensor<T> h5d;
};

/// Runs both streams through the three levels. Inputs are [N, 3, S, S] patch
/// batches; returns the level-3 maps (RGB, thermal).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> forward_features(
    const NetworkParams<T>& net, const Tensor<T>& rgb, const Tensor<T>& t,
    const RunMode& mode, std::mt19937_64* rng, FeatureCache<T>* cache);

/// Convenience wrapper for inference with an explicit DMC switch.
template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> forward_features(
    const NetworkParams<T>& net, const Tensor<T>& rgb, const Tensor<T>& t,
    bool use_dmc);

/// Folds the batch statistics recorded during a training forward.
template <typename T>
void update_batchnorm_stats(NetworkParams<T>& net, const FeatureCache<T>& c);

/// Returns (d rgb, d t) input gradients; accumulates into parameter grads.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> backward_features(
    NetworkParams<T>& net, const RunMode& mode, const FeatureCache<T>& cache,
    const Tensor<T>& d_rgb3, const Tensor<T>& d_t3);

/// Concatenates the level-3 maps channel-wise and flattens to [N, D, 1, 1].
template <typename T>
Tensor<T> join_features(const Tensor<T>& rgb3, const Tensor<T>& t3);

/// fc4 -> fc5 -> head[domain]; returns [N, 2, 1, 1] logits, channel 0 the
/// positive score. Throws std::out_of_range for a bad domain.
template <typename T>
Tensor<T> classify_features(const NetworkParams<T>& net,
                            const Tensor<T>& features, int domain,
                            bool training, std::mt19937_64* rng,
                            ClassifierCache<T>* cache);

template <typename T>
Tensor<T> backward_classifier(NetworkParams<T>& net, int domain,
                              const ClassifierCache<T>& cache,
                              const Tensor<T>& d_scores);

template <typename T>
std::vector<ScorePair> to_score_pairs(const Tensor<T>& logits);

/// Inference on level-3 maps: concatenation, fc layers, domain head.
template <typename T>
std::vector<ScorePair> classify(const NetworkParams<T>& net,
                                const FeatureMap<T>& rgb3,
                                const FeatureMap<T>& t3, int domain);

/// Batched inference of classifier features in chunks to bound memory.
template <typename T>
Tensor<T> extract_features(const NetworkParams<T>& net, const Tensor<T>& rgb,
                           const Tensor<T>& t, bool use_dmc, int chunk = 64);

}  // namespace rgbt
