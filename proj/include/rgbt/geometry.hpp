#pragma once

// Box geometry, candidate samplers, patch cropping and box regression.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rgbt/image.hpp"
#include "rgbt/tensor.hpp"

namespace rgbt {

struct BoundingBox {
  double x = 0;  // top-left
  double y = 0;
  double w = 0;
  double h = 0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  bool valid() const { return w > 0 && h > 0; }
  bool operator==(const BoundingBox&) const = default;

  static BoundingBox from_center(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, w, h};
  }
};

struct ImageBounds {
  int width = 0;
  int height = 0;
};

/// Sampled state (cx, cy, s); s scales the reference size (w0, h0) jointly.
struct CandidateState {
  double cx = 0;
  double cy = 0;
  double s = 1;
  double w0 = 0;
  double h0 = 0;

  double r() const { return s * (w0 + h0) / 2; }
  BoundingBox box() const { return BoundingBox::from_center(cx, cy, s * w0, s * h0); }
  static CandidateState from_box(const BoundingBox& b) {
    return {b.cx(), b.cy(), 1.0, b.w, b.h};
  }
};

double iou(const BoundingBox& a, const BoundingBox& b);

/// Shrinks the box to fit and shifts it inside the image; the size is kept
/// whenever it fits.
BoundingBox clamp_box(const BoundingBox& b, const ImageBounds& bounds);

struct GaussianSampler {
  double center_std = 0.3;  // times r
  double scale_std = 0.5;   // of the exponent
  double scale_base = 1.05;
};

struct UniformSampler {
  double translation = 1.0;  // +- translation * r
  double scale_min = 0.7;
  double scale_max = 1.4;
};

/// Throws std::invalid_argument when r <= 0 or n <= 0.
std::vector<BoundingBox> sample_gaussian(const CandidateState& prev, int n,
                                         const ImageBounds& bounds,
                                         std::mt19937_64& rng,
                                         const GaussianSampler& p = {});

/// Throws std::invalid_argument for an empty or inverted range.
std::vector<BoundingBox> sample_uniform(const BoundingBox& gt, int n,
                                        const ImageBounds& bounds,
                                        std::mt19937_64& rng,
                                        const UniformSampler& p = {});

/// Boxes of the reference size with centers uniform over the positions where
/// the box fits entirely inside the image.
std::vector<BoundingBox> sample_global(const ImageBounds& bounds, int n,
                                       const BoundingBox& scale_of,
                                       std::mt19937_64& rng);

struct LabeledSamples {
  std::vector<BoundingBox> positives;
  std::vector<BoundingBox> negatives;
};

/// IoU >= pos_thr positive, IoU <= neg_thr negative, the rest dropped.
LabeledSamples label_samples(const std::vector<BoundingBox>& samples,
                             const BoundingBox& gt, double pos_thr,
                             double neg_thr);

struct SampleQuota {
  int positives = 32;
  int negatives = 96;
  double pos_thr = 0.7;
  double neg_thr = 0.5;
  UniformSampler pos_sampler{0.1, 0.95, 1.05};
  UniformSampler neg_sampler{};
  double global_neg_fraction = 0.5;  // share of negatives drawn image-wide
  int max_rounds = 50;
};

/// Draws boxes around `gt` until both quotas are filled. Throws
/// TrainingError after max_rounds rounds.
LabeledSamples draw_labeled_samples(const BoundingBox& gt,
                                    const ImageBounds& bounds,
                                    const SampleQuota& q, std::mt19937_64& rng);

/// Crops `box` enlarged by (1 + context), replicating border pixels, and
/// resizes bilinearly to out_size x out_size. Output [3, S, S] values in
/// [0, 1], written into `dst` (3 * S * S floats). Throws std::invalid_argument
/// when the box does not overlap the image.
void crop_patch(const Image& image, const BoundingBox& box, int out_size,
                double context, float* dst);

/// Batch of crops: [N, 3, S, S].
Tensor<float> crop_patches(const Image& image,
                           const std::vector<BoundingBox>& boxes, int out_size,
                           double context);

// ---------------------------------------------------------------- regression

/// (dx, dy, log dw, log dh) of `gt` relative to `box`.
Eigen::Vector4d regression_target(const BoundingBox& box,
                                  const BoundingBox& gt);
BoundingBox apply_regression_offsets(const BoundingBox& box,
                                     const Eigen::Vector4d& t);

struct BoxRegressor {
  Eigen::MatrixXd weights;  // [D + 1, 4], last row multiplies a constant 1

  bool trained() const { return weights.size() > 0; }
  Eigen::Vector4d predict(const float* feature) const;
};

/// Ridge regression with a constant feature appended (the bias is
/// regularized as well). Throws TrainingError with fewer than two samples, or
/// when lambda == 0 and the augmented features are rank deficient.
BoxRegressor train_bbox_regressor(const Tensor<float>& features,
                                  const std::vector<BoundingBox>& boxes,
                                  const BoundingBox& gt, double lambda);

BoundingBox apply_bbox_regression(const BoxRegressor& reg,
                                  const float* feature,
                                  const BoundingBox& box);

}  // namespace rgbt
