#pragma once

// Camera-motion detection from regional optical flow and directional
// re-sampling of candidates.

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "rgbt/geometry.hpp"
#include "rgbt/image.hpp"

namespace rgbt {

/// Three times the box size around its center, intersected with the image.
BoundingBox local_region(const BoundingBox& prev_box, const ImageBounds& bounds);

/// Dense flow over an integer region: cur(p + d(p)) ~ prev(p).
struct FlowField {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
  std::vector<float> dx;
  std::vector<float> dy;
  std::vector<std::uint8_t> valid;  // 0 where the estimator has no support
};

class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;

  FlowField estimate(const GrayImage& prev, const GrayImage& cur,
                     const BoundingBox& region) {
    ++calls_;
    return compute(prev, cur, region);
  }
  long calls() const { return calls_.load(); }
  virtual std::string name() const = 0;

 protected:
  virtual FlowField compute(const GrayImage& prev, const GrayImage& cur,
                            const BoundingBox& region) = 0;

 private:
  std::atomic<long> calls_{0};
};

/// Coarse-to-fine SAD block matching. Only the region plus the reachable
/// search margin is read, so the cost does not depend on the image size.
class BlockMatchingFlow : public FlowEstimator {
 public:
  struct Options {
    int levels = 3;
    int block = 8;
    int search = 8;           // +- pixels at every level
    float texture_floor = 2;  // block std below this is ignored
  };

  BlockMatchingFlow() = default;
  explicit BlockMatchingFlow(Options o) : opt_(o) {}
  std::string name() const override { return "block"; }

 protected:
  FlowField compute(const GrayImage& prev, const GrayImage& cur,
                    const BoundingBox& region) override;

 private:
  Options opt_;
};

/// OpenCV's dense inverse search on the region plus a margin.
class DisFlow : public FlowEstimator {
 public:
  explicit DisFlow(int margin = 32) : margin_(margin) {}
  std::string name() const override { return "dis"; }

 protected:
  FlowField compute(const GrayImage& prev, const GrayImage& cur,
                    const BoundingBox& region) override;

 private:
  int margin_;
};

/// "block" or "dis"; throws std::invalid_argument otherwise.
std::unique_ptr<FlowEstimator> make_flow_estimator(const std::string& name);

struct Displacement {
  double dx = 0;
  double dy = 0;
  bool confident = true;
};

/// Mean of the valid flow vectors over `region`. With no valid vectors the
/// result is (0, 0) with confident = false.
Displacement mean_displacement(const GrayImage& prev, const GrayImage& cur,
                               const BoundingBox& region,
                               FlowEstimator& estimator);

/// Scene content moves opposite to the camera.
inline Displacement camera_motion_from_flow(const Displacement& flow) {
  return {-flow.dx, -flow.dy, flow.confident};
}

struct MotionDecision {
  bool triggered = false;
  bool horizontal = false;
  bool vertical = false;
  int dir_x = 0;  // target direction, opposite to the camera motion
  int dir_y = 0;
};

/// An axis triggers when |d| > u strictly.
MotionDecision detect(const Displacement& camera, double u);

inline constexpr int kResampleCount = 16;

/// Boxes k = 1..16 shifted by k quarter-widths / quarter-heights along the
/// triggered axes, clamped to the image.
std::vector<BoundingBox> resample(const BoundingBox& prev_box,
                                  const MotionDecision& decision,
                                  const ImageBounds& bounds);

}  // namespace rgbt
