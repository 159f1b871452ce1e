#pragma once

// Differentiable building blocks shared by the two-stream network and the
// mutual-condition block. Every forward that participates in training fills
// a small cache struct; the matching backward consumes it and accumulates
// parameter gradients into Param::grad.

#include <cstdint>
#include <random>
#include <string>

#include "rgbt/tensor.hpp"

namespace rgbt {

enum class ParamGroup { backbone, adapter, dmc, fc_shared, fc_domain };

const char* group_name(ParamGroup g);

template <typename T>
struct Param {
  std::string name;
  ParamGroup group = ParamGroup::backbone;
  Tensor<T> value;
  Tensor<T> grad;

  void init(std::string n, ParamGroup g, Shape s) {
    name = std::move(n);
    group = g;
    value = Tensor<T>(s);
    grad = Tensor<T>(s);
  }
};

// ---------------------------------------------------------------- conv

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  int out_size(int in) const {
    return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
  }
};

template <typename T>
struct ConvParams {
  ConvSpec spec;
  Param<T> weight;  // [out, in, k, k]
  Param<T> bias;    // [1, out, 1, 1]

  void init(const std::string& name, ParamGroup g, const ConvSpec& s);
};

template <typename T>
Tensor<T> conv2d_forward(const ConvParams<T>& p, const Tensor<T>& x);

/// Accumulates weight/bias gradients; writes the input gradient to dx when
/// dx is non-null (dx is overwritten, not accumulated).
template <typename T>
void conv2d_backward(ConvParams<T>& p, const Tensor<T>& x, const Tensor<T>& dy,
                     Tensor<T>* dx);

// ---------------------------------------------------------------- linear

template <typename T>
struct LinearParams {
  Param<T> weight;  // [out, in, 1, 1]
  Param<T> bias;    // [1, out, 1, 1]

  int in_features() const { return weight.value.c(); }
  int out_features() const { return weight.value.n(); }
  void init(const std::string& name, ParamGroup g, int in, int out);
};

/// x: [N, D, 1, 1] (any H, W are flattened) -> [N, out, 1, 1].
template <typename T>
Tensor<T> linear_forward(const LinearParams<T>& p, const Tensor<T>& x);

template <typename T>
void linear_backward(LinearParams<T>& p, const Tensor<T>& x,
                     const Tensor<T>& dy, Tensor<T>* dx);

// ---------------------------------------------------------------- pointwise

template <typename T>
void relu_inplace(Tensor<T>& x);

/// dy is masked in place by the post-activation output y.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy);

template <typename T>
void sigmoid_inplace(Tensor<T>& x);

// ---------------------------------------------------------------- LRN

/// Cross-channel local response normalization,
/// y_c = x_c / (k + alpha/size * sum_{window(c)} x^2)^beta.
struct LrnSpec {
  int size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 2.0;
};

template <typename T>
struct LrnCache {
  Tensor<T> x;
  Tensor<T> scale;
  Tensor<T> y;
};

template <typename T>
Tensor<T> lrn_forward(const LrnSpec& s, const Tensor<T>& x,
                      LrnCache<T>* cache);

template <typename T>
Tensor<T> lrn_backward(const LrnSpec& s, const LrnCache<T>& cache,
                       const Tensor<T>& dy);

// ---------------------------------------------------------------- pooling

struct PoolSpec {
  int kernel = 0;  // 0 disables the stage
  int stride = 1;

  bool enabled() const { return kernel > 0; }
  int out_size(int in) const {
    return enabled() ? (in - kernel) / stride + 1 : in;
  }
};

struct PoolCache {
  Shape in_shape;
  std::vector<std::uint32_t> argmax;
};

template <typename T>
Tensor<T> maxpool_forward(const PoolSpec& s, const Tensor<T>& x,
                          PoolCache* cache);

template <typename T>
Tensor<T> maxpool_backward(const PoolCache& cache, const Tensor<T>& dy);

// ---------------------------------------------------------------- batch norm

template <typename T>
struct BatchNormParams {
  Param<T> gamma;  // [1, C, 1, 1]
  Param<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  void init(const std::string& name, ParamGroup g, int channels);
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;  // unbiased
  bool training = false;
};

/// training=true normalizes with batch statistics (recorded in the cache);
/// otherwise uses the running estimates.
template <typename T>
Tensor<T> batchnorm_forward(const BatchNormParams<T>& p, const Tensor<T>& x,
                            bool training, BatchNormCache<T>* cache);

/// Folds the batch statistics of a training-mode forward into the running
/// estimates.
template <typename T>
void batchnorm_update_running(BatchNormParams<T>& p,
                              const BatchNormCache<T>& cache);

template <typename T>
Tensor<T> batchnorm_backward(BatchNormParams<T>& p,
                             const BatchNormCache<T>& cache,
                             const Tensor<T>& dy);

// ---------------------------------------------------------------- dropout

/// Inverted dropout. The mask (already scaled by 1/(1-p)) is stored in
/// `mask`; with p == 0 the call is an identity and leaves mask empty.
template <typename T>
void dropout_inplace(Tensor<T>& x, double p, std::mt19937_64& rng,
                     Tensor<T>* mask);

template <typename T>
void dropout_backward_inplace(const Tensor<T>& mask, Tensor<T>& dy);

// ---------------------------------------------------------------- misc

/// Channel-wise concatenation of two tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void split_channels(const Tensor<T>& ab, int c_first, Tensor<T>& a,
                    Tensor<T>& b);

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace rgbt
