#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "rgbt/layers.hpp"
#include "rgbt/network.hpp"
#include "rgbt/trainer.hpp"

namespace rgbt::test {

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.span()) v = static_cast<T>(d(rng));
  return t;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to every element of `x`. Entries where both are tiny
/// are compared in absolute terms.
inline double fd_check(Tensor<double>& x, const Tensor<double>& analytic,
                       const std::function<double()>& loss, double h = 1e-6,
                       double abs_floor = 1e-7) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    const double num = (up - down) / (2 * h);
    const double a = analytic[i];
    if (std::abs(num - a) < abs_floor) continue;
    worst = std::max(worst, rel_err(num, a));
  }
  return worst;
}

/// Like fd_check, but only entries where both gradients are below
/// `magnitude_floor` are skipped; every other entry counts relatively.
inline double fd_rel_check(Tensor<double>& x, const Tensor<double>& analytic,
                           const std::function<double()>& loss, double h,
                           double magnitude_floor) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    const double num = (up - down) / (2 * h);
    if (std::max(std::abs(num), std::abs(analytic[i])) < magnitude_floor) continue;
    worst = std::max(worst, rel_err(num, analytic[i]));
  }
  return worst;
}

/// Weighted sum used as a scalar probe loss: sum(y .* w).
inline double probe(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

/// 23x23 input, levels 5 / 2 / 2, eight channels at level 3.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.input_size = 23;
  c.backbone = {{{3, 2, 4, true, {3, 2}}, {3, 1, 6, true, {2, 1}}, {1, 1, 8, false, {}}}};
  c.adapters = {{{3, 2, {3, 2}}, {1, 1, {4, 1}}, {1, 1, {}}}};
  c.fc_width = 6;
  c.dmc_bottleneck_ratio = 2;
  return c;
}

// Cross-entropy of a two-candidate batch through the whole network in
// training mode (dropout off so the loss is a deterministic function).
inline double e2e_loss(NetworkParams<double>& net, const Tensor<double>& x,
                const Tensor<double>& y, bool use_dmc, bool backward) {
  const RunMode mode{true, use_dmc};
  FeatureCache<double> fc;
  auto [r3, t3] = forward_features<double>(net, x, y, mode, nullptr, &fc);
  ClassifierCache<double> cc;
  const auto logits = classify_features<double>(net, join_features(r3, t3), 0, true, nullptr, &cc);
  Tensor<double> dl;
  const double loss = softmax_loss(logits, {1, 0}, backward ? &dl : nullptr);
  if (backward) {
    Tensor<double> dx = backward_classifier(net, 0, cc, dl);
    dx.reshape({r3.n(), 2 * r3.c(), r3.h(), r3.w()});
    Tensor<double> dr, dt;
    split_channels(dx, r3.c(), dr, dt);
    backward_features(net, mode, fc, dr, dt);
  }
  return loss;
}

}  // namespace rgbt::test
