#include "rgbt/motion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <opencv2/video/tracking.hpp>

namespace rgbt {

BoundingBox local_region(const BoundingBox& prev_box,
                         const ImageBounds& bounds) {
  const BoundingBox big = BoundingBox::from_center(
      prev_box.cx(), prev_box.cy(), 3 * prev_box.w, 3 * prev_box.h);
  const double x0 = std::clamp(big.x, 0.0, static_cast<double>(bounds.width));
  const double y0 = std::clamp(big.y, 0.0, static_cast<double>(bounds.height));
  const double x1 =
      std::clamp(big.x + big.w, 0.0, static_cast<double>(bounds.width));
  const double y1 =
      std::clamp(big.y + big.h, 0.0, static_cast<double>(bounds.height));
  return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

struct IntRect {
  int x0, y0, x1, y1;  // half-open
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
};

IntRect pixel_rect(const BoundingBox& r, int width, int height) {
  IntRect o{static_cast<int>(std::floor(r.x)), static_cast<int>(std::floor(r.y)),
            static_cast<int>(std::ceil(r.x + r.w)),
            static_cast<int>(std::ceil(r.y + r.h))};
  o.x0 = std::clamp(o.x0, 0, width);
  o.y0 = std::clamp(o.y0, 0, height);
  o.x1 = std::clamp(o.x1, o.x0, width);
  o.y1 = std::clamp(o.y1, o.y0, height);
  return o;
}

struct Plane {
  int w = 0, h = 0;
  std::vector<float> v;
  float at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane extract(const GrayImage& img, const IntRect& r) {
  Plane p{r.w(), r.h(), std::vector<float>(static_cast<std::size_t>(r.w()) * r.h())};
  for (int y = 0; y < p.h; ++y) {
    std::copy_n(&img.values[static_cast<std::size_t>(r.y0 + y) * img.width + r.x0],
                p.w, &p.v[static_cast<std::size_t>(y) * p.w]);
  }
  return p;
}

Plane half(const Plane& p) {
  Plane o{p.w / 2, p.h / 2, {}};
  o.v.resize(static_cast<std::size_t>(o.w) * o.h);
  for (int y = 0; y < o.h; ++y) {
    for (int x = 0; x < o.w; ++x) {
      o.v[static_cast<std::size_t>(y) * o.w + x] =
          0.25f * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) +
                   p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
    }
  }
  return o;
}

struct Block {
  int x0, y0, x1, y1;
  float vx = 0, vy = 0;
  bool valid = false;
};

double sad(const Plane& a, const Plane& b, const Block& blk, int ox, int oy) {
  double s = 0;
  for (int y = blk.y0; y < blk.y1; ++y) {
    const float* ra = &a.v[static_cast<std::size_t>(y) * a.w];
    const float* rb = &b.v[static_cast<std::size_t>(y + oy) * b.w + ox];
    for (int x = blk.x0; x < blk.x1; ++x) s += std::abs(ra[x] - rb[x]);
  }
  return s;
}

float block_std(const Plane& a, const Block& blk) {
  double s = 0, s2 = 0;
  const int n = (blk.x1 - blk.x0) * (blk.y1 - blk.y0);
  for (int y = blk.y0; y < blk.y1; ++y) {
    for (int x = blk.x0; x < blk.x1; ++x) {
      const double v = a.at(x, y);
      s += v;
      s2 += v * v;
    }
  }
  const double m = s / n;
  return static_cast<float>(std::sqrt(std::max(0.0, s2 / n - m * m)));
}

}  // namespace

FlowField BlockMatchingFlow::compute(const GrayImage& prev, const GrayImage& cur,
                                     const BoundingBox& region) {
  if (prev.width != cur.width || prev.height != cur.height) {
    throw std::invalid_argument("flow: frame sizes differ");
  }
  const IntRect reg = pixel_rect(region, prev.width, prev.height);
  FlowField field;
  field.x0 = reg.x0;
  field.y0 = reg.y0;
  field.width = reg.w();
  field.height = reg.h();
  const std::size_t npix = static_cast<std::size_t>(reg.w()) * reg.h();
  field.dx.assign(npix, 0.f);
  field.dy.assign(npix, 0.f);
  field.valid.assign(npix, 0);
  if (npix == 0) return field;

  const int margin = opt_.search * ((1 << opt_.levels) - 1);
  const IntRect patch =
      pixel_rect({reg.x0 - margin * 1.0, reg.y0 - margin * 1.0,
                  reg.w() + 2.0 * margin, reg.h() + 2.0 * margin},
                 prev.width, prev.height);
  std::vector<Plane> pa{extract(prev, patch)};
  std::vector<Plane> pb{extract(cur, patch)};
  int levels = 1;
  while (levels < opt_.levels &&
         std::min(reg.w(), reg.h()) >> levels >= opt_.block / 2 &&
         std::min(pa.back().w, pa.back().h) / 2 >= opt_.block) {
    pa.push_back(half(pa.back()));
    pb.push_back(half(pb.back()));
    ++levels;
  }

  std::vector<Block> coarse;
  int coarse_nbx = 0;
  int coarse_bx0 = 0, coarse_by0 = 0;
  for (int l = levels - 1; l >= 0; --l) {
    const Plane& a = pa[l];
    const Plane& b = pb[l];
    const int rx0 = (reg.x0 - patch.x0) >> l;
    const int ry0 = (reg.y0 - patch.y0) >> l;
    const int rw = std::max(1, std::min(reg.w() >> l, a.w - rx0));
    const int rh = std::max(1, std::min(reg.h() >> l, a.h - ry0));
    const int bs = opt_.block;
    const int nbx = (rw + bs - 1) / bs;
    const int nby = (rh + bs - 1) / bs;
    std::vector<Block> blocks(static_cast<std::size_t>(nbx) * nby);
    for (int j = 0; j < nby; ++j) {
      for (int i = 0; i < nbx; ++i) {
        Block& blk = blocks[static_cast<std::size_t>(j) * nbx + i];
        blk.x0 = rx0 + i * bs;
        blk.y0 = ry0 + j * bs;
        blk.x1 = std::min(blk.x0 + bs, rx0 + rw);
        blk.y1 = std::min(blk.y0 + bs, ry0 + rh);
        int gx = 0, gy = 0;
        if (!coarse.empty()) {
          const int cx = ((blk.x0 + blk.x1) / 2) / 2;
          const int cy = ((blk.y0 + blk.y1) / 2) / 2;
          const int ci = std::clamp((cx - coarse_bx0) / bs, 0, coarse_nbx - 1);
          const int cj = std::clamp((cy - coarse_by0) / bs, 0,
                                    static_cast<int>(coarse.size()) / coarse_nbx - 1);
          const Block& c = coarse[static_cast<std::size_t>(cj) * coarse_nbx + ci];
          gx = static_cast<int>(std::lround(2 * c.vx));
          gy = static_cast<int>(std::lround(2 * c.vy));
        }
        blk.vx = static_cast<float>(gx);
        blk.vy = static_cast<float>(gy);
        if (block_std(a, blk) < opt_.texture_floor) continue;

        auto inside = [&](int ox, int oy) {
          return blk.x0 + ox >= 0 && blk.x1 + ox <= b.w && blk.y0 + oy >= 0 &&
                 blk.y1 + oy <= b.h;
        };
        double best = std::numeric_limits<double>::infinity();
        int bx = gx, by = gy;
        // the guess itself first so that ties keep it
        if (inside(gx, gy)) best = sad(a, b, blk, gx, gy);
        // windows around the coarse guess and around zero
        for (const auto [cx, cy] : {std::pair{gx, gy}, std::pair{0, 0}}) {
          for (int oy = cy - opt_.search; oy <= cy + opt_.search; ++oy) {
            for (int ox = cx - opt_.search; ox <= cx + opt_.search; ++ox) {
              if ((ox == gx && oy == gy) || !inside(ox, oy)) continue;
              const double s = sad(a, b, blk, ox, oy);
              if (s < best) {
                best = s;
                bx = ox;
                by = oy;
              }
            }
          }
          if (gx == 0 && gy == 0) break;
        }
        if (!std::isfinite(best)) continue;
        blk.vx = static_cast<float>(bx);
        blk.vy = static_cast<float>(by);
        blk.valid = true;
        if (l == 0 && best > 0) {
          auto refine = [&](int ax, int ay) {
            if (!inside(bx - ax, by - ay) || !inside(bx + ax, by + ay)) return 0.0;
            const double m = sad(a, b, blk, bx - ax, by - ay);
            const double p = sad(a, b, blk, bx + ax, by + ay);
            const double den = m - 2 * best + p;
            return den > 0 ? std::clamp((m - p) / (2 * den), -0.5, 0.5) : 0.0;
          };
          blk.vx += static_cast<float>(refine(1, 0));
          blk.vy += static_cast<float>(refine(0, 1));
        }
      }
    }
    if (l == 0) {
      for (const Block& blk : blocks) {
        for (int y = blk.y0; y < blk.y1; ++y) {
          for (int x = blk.x0; x < blk.x1; ++x) {
            const std::size_t k =
                static_cast<std::size_t>(y - ry0) * field.width + (x - rx0);
            field.dx[k] = blk.vx;
            field.dy[k] = blk.vy;
            field.valid[k] = blk.valid;
          }
        }
      }
    }
    coarse = std::move(blocks);
    coarse_nbx = nbx;
    coarse_bx0 = rx0;
    coarse_by0 = ry0;
  }
  return field;
}

FlowField DisFlow::compute(const GrayImage& prev, const GrayImage& cur,
                           const BoundingBox& region) {
  const IntRect reg = pixel_rect(region, prev.width, prev.height);
  const IntRect patch =
      pixel_rect({reg.x0 - margin_ * 1.0, reg.y0 - margin_ * 1.0,
                  reg.w() + 2.0 * margin_, reg.h() + 2.0 * margin_},
                 prev.width, prev.height);
  FlowField field;
  field.x0 = reg.x0;
  field.y0 = reg.y0;
  field.width = reg.w();
  field.height = reg.h();
  const std::size_t npix = static_cast<std::size_t>(reg.w()) * reg.h();
  field.dx.assign(npix, 0.f);
  field.dy.assign(npix, 0.f);
  field.valid.assign(npix, 0);
  if (npix == 0) return field;
  auto to_mat = [&](const GrayImage& g) {
    cv::Mat m(patch.h(), patch.w(), CV_8UC1);
    for (int y = 0; y < patch.h(); ++y) {
      for (int x = 0; x < patch.w(); ++x) {
        m.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(
            g.at(patch.x0 + x, patch.y0 + y));
      }
    }
    return m;
  };
  cv::Mat flow;
  auto dis = cv::DISOpticalFlow::create(cv::DISOpticalFlow::PRESET_MEDIUM);
  dis->calc(to_mat(prev), to_mat(cur), flow);
  for (int y = 0; y < reg.h(); ++y) {
    for (int x = 0; x < reg.w(); ++x) {
      const auto v = flow.at<cv::Vec2f>(reg.y0 - patch.y0 + y, reg.x0 - patch.x0 + x);
      const std::size_t k = static_cast<std::size_t>(y) * reg.w() + x;
      field.dx[k] = v[0];
      field.dy[k] = v[1];
      field.valid[k] = 1;
    }
  }
  return field;
}

std::unique_ptr<FlowEstimator> make_flow_estimator(const std::string& name) {
  if (name == "block") return std::make_unique<BlockMatchingFlow>();
  if (name == "dis") return std::make_unique<DisFlow>();
  throw std::invalid_argument("unknown flow estimator '" + name + "'");
}

Displacement mean_displacement(const GrayImage& prev, const GrayImage& cur,
                               const BoundingBox& region,
                               FlowEstimator& estimator) {
  const FlowField f = estimator.estimate(prev, cur, region);
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < f.valid.size(); ++i) {
    if (!f.valid[i]) continue;
    sx += f.dx[i];
    sy += f.dy[i];
    ++n;
  }
  if (n == 0) return {0.0, 0.0, false};
  return {sx / n, sy / n, true};
}

MotionDecision detect(const Displacement& camera, double u) {
  MotionDecision d;
  d.horizontal = std::abs(camera.dx) > u;
  d.vertical = std::abs(camera.dy) > u;
  if (d.horizontal) d.dir_x = camera.dx > 0 ? -1 : 1;
  if (d.vertical) d.dir_y = camera.dy > 0 ? -1 : 1;
  d.triggered = d.horizontal || d.vertical;
  return d;
}

std::vector<BoundingBox> resample(const BoundingBox& prev_box,
                                  const MotionDecision& decision,
                                  const ImageBounds& bounds) {
  std::vector<BoundingBox> out;
  out.reserve(kResampleCount);
  const double sx = prev_box.w / 4 * decision.dir_x;
  const double sy = prev_box.h / 4 * decision.dir_y;
  for (int k = 1; k <= kResampleCount; ++k) {
    BoundingBox b = prev_box;
    b.x += k * sx;
    b.y += k * sy;
    out.push_back(clamp_box(b, bounds));
  }
  return out;
}

}  // namespace rgbt
