#include "rgbt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rgbt/errors.hpp"

namespace rgbt {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) -
                                      std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) -
                                      std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

BoundingBox clamp_box(const BoundingBox& b, const ImageBounds& bounds) {
  BoundingBox o = b;
  o.w = std::clamp(o.w, 1.0, static_cast<double>(bounds.width));
  o.h = std::clamp(o.h, 1.0, static_cast<double>(bounds.height));
  // keep the center when the size shrank
  o.x = b.cx() - o.w / 2;
  o.y = b.cy() - o.h / 2;
  o.x = std::clamp(o.x, 0.0, bounds.width - o.w);
  o.y = std::clamp(o.y, 0.0, bounds.height - o.h);
  return o;
}

std::vector<BoundingBox> sample_gaussian(const CandidateState& prev, int n,
                                         const ImageBounds& bounds,
                                         std::mt19937_64& rng,
                                         const GaussianSampler& p) {
  if (n <= 0) throw std::invalid_argument("sample_gaussian: n must be > 0");
  if (!(prev.r() > 0) || prev.w0 <= 0 || prev.h0 <= 0) {
    throw std::invalid_argument("sample_gaussian: degenerate previous state");
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  const double r = prev.r();
  std::vector<BoundingBox> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double dx = nd(rng) * p.center_std * r;
    const double dy = nd(rng) * p.center_std * r;
    const double ds = std::pow(p.scale_base, nd(rng) * p.scale_std);
    const double s = prev.s * ds;
    out.push_back(clamp_box(BoundingBox::from_center(prev.cx + dx, prev.cy + dy,
                                                     s * prev.w0, s * prev.h0),
                            bounds));
  }
  return out;
}

std::vector<BoundingBox> sample_uniform(const BoundingBox& gt, int n,
                                        const ImageBounds& bounds,
                                        std::mt19937_64& rng,
                                        const UniformSampler& p) {
  if (n <= 0) throw std::invalid_argument("sample_uniform: n must be > 0");
  if (!gt.valid()) throw std::invalid_argument("sample_uniform: invalid box");
  if (p.translation < 0 || p.scale_min <= 0 || p.scale_min > p.scale_max) {
    throw std::invalid_argument("sample_uniform: empty range");
  }
  const double r = (gt.w + gt.h) / 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> us(p.scale_min, p.scale_max);
  std::vector<BoundingBox> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double dx = u(rng) * p.translation * r;
    const double dy = u(rng) * p.translation * r;
    const double s = p.scale_min == p.scale_max ? p.scale_min : us(rng);
    out.push_back(clamp_box(
        BoundingBox::from_center(gt.cx() + dx, gt.cy() + dy, gt.w * s, gt.h * s),
        bounds));
  }
  return out;
}

std::vector<BoundingBox> sample_global(const ImageBounds& bounds, int n,
                                       const BoundingBox& scale_of,
                                       std::mt19937_64& rng) {
  if (n <= 0) throw std::invalid_argument("sample_global: n must be > 0");
  if (!scale_of.valid() || bounds.width <= 0 || bounds.height <= 0) {
    throw std::invalid_argument("sample_global: empty range");
  }
  const double w = std::min<double>(scale_of.w, bounds.width);
  const double h = std::min<double>(scale_of.h, bounds.height);
  std::uniform_real_distribution<double> ux(0.0, bounds.width - w);
  std::uniform_real_distribution<double> uy(0.0, bounds.height - h);
  std::vector<BoundingBox> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back({ux(rng), uy(rng), w, h});
  return out;
}

LabeledSamples label_samples(const std::vector<BoundingBox>& samples,
                             const BoundingBox& gt, double pos_thr,
                             double neg_thr) {
  LabeledSamples out;
  for (const auto& b : samples) {
    const double o = iou(b, gt);
    if (o >= pos_thr) out.positives.push_back(b);
    else if (o <= neg_thr) out.negatives.push_back(b);
  }
  return out;
}

LabeledSamples draw_labeled_samples(const BoundingBox& gt,
                                    const ImageBounds& bounds,
                                    const SampleQuota& q, std::mt19937_64& rng) {
  if (q.positives < 0 || q.negatives < 0) {
    throw std::invalid_argument("draw_labeled_samples: negative quota");
  }
  LabeledSamples out;
  const int n_global = static_cast<int>(std::lround(q.negatives * q.global_neg_fraction));
  const int n_local = q.negatives - n_global;
  int local_neg = 0, global_neg = 0;
  constexpr int kDraw = 64;
  for (int round = 0; round < q.max_rounds; ++round) {
    if (static_cast<int>(out.positives.size()) < q.positives) {
      for (const auto& b : sample_uniform(gt, kDraw, bounds, rng, q.pos_sampler)) {
        if (static_cast<int>(out.positives.size()) == q.positives) break;
        if (iou(b, gt) >= q.pos_thr) out.positives.push_back(b);
      }
    }
    if (local_neg < n_local) {
      for (const auto& b : sample_uniform(gt, kDraw, bounds, rng, q.neg_sampler)) {
        if (local_neg == n_local) break;
        if (iou(b, gt) <= q.neg_thr) {
          out.negatives.push_back(b);
          ++local_neg;
        }
      }
    }
    if (global_neg < n_global) {
      for (const auto& b : sample_global(bounds, kDraw, gt, rng)) {
        if (global_neg == n_global) break;
        if (iou(b, gt) <= q.neg_thr) {
          out.negatives.push_back(b);
          ++global_neg;
        }
      }
    }
    if (static_cast<int>(out.positives.size()) == q.positives &&
        local_neg == n_local && global_neg == n_global) {
      return out;
    }
  }
  throw TrainingError("could not draw " + std::to_string(q.positives) +
                      " positive / " + std::to_string(q.negatives) +
                      " negative samples (got " +
                      std::to_string(out.positives.size()) + " / " +
                      std::to_string(out.negatives.size()) + ")");
}

void crop_patch(const Image& image, const BoundingBox& box, int out_size,
                double context, float* dst) {
  if (image.empty()) throw std::invalid_argument("crop_patch: empty image");
  const double w = box.w * (1 + context);
  const double h = box.h * (1 + context);
  const double x0 = box.cx() - w / 2;
  const double y0 = box.cy() - h / 2;
  if (!(w > 0 && h > 0) || x0 >= image.width || y0 >= image.height ||
      x0 + w <= 0 || y0 + h <= 0) {
    throw std::invalid_argument("crop_patch: box outside image");
  }
  const int S = out_size;
  const double sx = w / S;
  const double sy = h / S;
  const int W = image.width;
  const int H = image.height;
  const int C = image.channels;
  std::vector<int> xa(S), xb(S);
  std::vector<float> fx(S);
  for (int j = 0; j < S; ++j) {
    const double src = x0 + (j + 0.5) * sx - 0.5;
    const double f = std::floor(src);
    fx[j] = static_cast<float>(src - f);
    xa[j] = std::clamp(static_cast<int>(f), 0, W - 1);
    xb[j] = std::clamp(static_cast<int>(f) + 1, 0, W - 1);
  }
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  for (int i = 0; i < S; ++i) {
    const double src = y0 + (i + 0.5) * sy - 0.5;
    const double f = std::floor(src);
    const float fy = static_cast<float>(src - f);
    const int ya = std::clamp(static_cast<int>(f), 0, H - 1);
    const int yb = std::clamp(static_cast<int>(f) + 1, 0, H - 1);
    const std::uint8_t* ra = &image.pixels[static_cast<std::size_t>(ya) * W * C];
    const std::uint8_t* rb = &image.pixels[static_cast<std::size_t>(yb) * W * C];
    for (int j = 0; j < S; ++j) {
      for (int c = 0; c < 3; ++c) {
        const int cc = C == 1 ? 0 : c;
        const float a = ra[xa[j] * C + cc] * (1 - fx[j]) + ra[xb[j] * C + cc] * fx[j];
        const float b = rb[xa[j] * C + cc] * (1 - fx[j]) + rb[xb[j] * C + cc] * fx[j];
        dst[c * plane + static_cast<std::size_t>(i) * S + j] =
            (a * (1 - fy) + b * fy) / 255.f;
      }
    }
  }
}

Tensor<float> crop_patches(const Image& image,
                           const std::vector<BoundingBox>& boxes, int out_size,
                           double context) {
  Tensor<float> out(static_cast<int>(boxes.size()), 3, out_size, out_size);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    crop_patch(image, boxes[i], out_size, context,
               out.sample(static_cast<int>(i)).data());
  }
  return out;
}

// ---------------------------------------------------------------- regression

Eigen::Vector4d regression_target(const BoundingBox& box,
                                  const BoundingBox& gt) {
  return {(gt.cx() - box.cx()) / box.w, (gt.cy() - box.cy()) / box.h,
          std::log(gt.w / box.w), std::log(gt.h / box.h)};
}

BoundingBox apply_regression_offsets(const BoundingBox& box,
                                     const Eigen::Vector4d& t) {
  return BoundingBox::from_center(box.cx() + t[0] * box.w,
                                  box.cy() + t[1] * box.h,
                                  box.w * std::exp(t[2]),
                                  box.h * std::exp(t[3]));
}

Eigen::Vector4d BoxRegressor::predict(const float* feature) const {
  const auto d = weights.rows() - 1;
  Eigen::RowVectorXd f(d + 1);
  f.head(d) = Eigen::Map<const Eigen::RowVectorXf>(feature, d).cast<double>();
  f[d] = 1.0;
  return (f * weights).transpose();
}

BoxRegressor train_bbox_regressor(const Tensor<float>& features,
                                  const std::vector<BoundingBox>& boxes,
                                  const BoundingBox& gt, double lambda) {
  const Eigen::Index n = features.n();
  const Eigen::Index d = static_cast<Eigen::Index>(features.shape().per_sample());
  if (n != static_cast<Eigen::Index>(boxes.size())) {
    throw std::invalid_argument("train_bbox_regressor: feature/box count mismatch");
  }
  if (n < 2) {
    throw TrainingError("bbox regressor: need at least 2 samples, got " +
                        std::to_string(n));
  }
  if (lambda < 0) throw std::invalid_argument("bbox regressor: lambda < 0");
  if (lambda == 0 && n < d + 1) {
    throw TrainingError("bbox regressor: " + std::to_string(n) +
                        " samples cannot determine " + std::to_string(d + 1) +
                        " weights without regularization");
  }
  Eigen::MatrixXd X(n, d + 1);
  X.leftCols(d) =
      Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>(features.data(), n, d)
          .cast<double>();
  X.col(d).setOnes();
  Eigen::MatrixXd Y(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    Y.row(i) = regression_target(boxes[i], gt).transpose();
  }
  BoxRegressor reg;
  if (lambda == 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < d + 1) {
      throw TrainingError("bbox regressor: rank-deficient features (rank " +
                          std::to_string(qr.rank()) + " < " +
                          std::to_string(d + 1) + ")");
    }
    reg.weights = qr.solve(Y);
  } else if (n < d + 1) {
    Eigen::MatrixXd K = X * X.transpose();
    K.diagonal().array() += lambda;
    reg.weights = X.transpose() * K.ldlt().solve(Y);
  } else {
    Eigen::MatrixXd A = X.transpose() * X;
    A.diagonal().array() += lambda;
    reg.weights = A.ldlt().solve(X.transpose() * Y);
  }
  return reg;
}

BoundingBox apply_bbox_regression(const BoxRegressor& reg,
                                  const float* feature,
                                  const BoundingBox& box) {
  if (!reg.trained()) return box;
  return apply_regression_offsets(box, reg.predict(feature));
}

}  // namespace rgbt
