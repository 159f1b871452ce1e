#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "rgbt/tracker.hpp"

namespace rgbt::test {

// Features are (cx, cy, w, h, frame tag); scores come from a script.
using Script = std::function<double(const BoundingBox&, int frame)>;

struct ScriptedBackend : TrackerBackend {
  Script script;
  int* fits = nullptr;
  std::vector<std::pair<int, int>>* fit_sizes = nullptr;

  Tensor<float> features(const FramePair& frame,
                         const std::vector<BoundingBox>& boxes) override {
    Tensor<float> f(static_cast<int>(boxes.size()), 5, 1, 1);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      f[i * 5 + 0] = static_cast<float>(boxes[i].cx());
      f[i * 5 + 1] = static_cast<float>(boxes[i].cy());
      f[i * 5 + 2] = static_cast<float>(boxes[i].w);
      f[i * 5 + 3] = static_cast<float>(boxes[i].h);
      f[i * 5 + 4] = frame.rgb.at(0, 0, 0);
    }
    return f;
  }
  std::vector<ScorePair> scores(const Tensor<float>& f) override {
    std::vector<ScorePair> out;
    for (int i = 0; i < f.n(); ++i) {
      const BoundingBox b = BoundingBox::from_center(f[i * 5], f[i * 5 + 1], f[i * 5 + 2],
                                                     f[i * 5 + 3]);
      out.push_back({script(b, static_cast<int>(f[i * 5 + 4])), 0.0});
    }
    return out;
  }
  void fit(const Tensor<float>& pos, const Tensor<float>& neg, const FitSchedule&) override {
    if (fits) ++*fits;
    if (fit_sizes) fit_sizes->push_back({pos.n(), neg.n()});
  }
};

// Every region gets the same content flow.
struct ConstantFlow : FlowEstimator {
  double dx = 0, dy = 0;
  ConstantFlow(double x, double y) : dx(x), dy(y) {}
  std::string name() const override { return "constant"; }

 protected:
  FlowField compute(const GrayImage&, const GrayImage&, const BoundingBox& r) override {
    FlowField f;
    f.width = static_cast<int>(r.w);
    f.height = static_cast<int>(r.h);
    const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
    f.dx.assign(n, static_cast<float>(dx));
    f.dy.assign(n, static_cast<float>(dy));
    f.valid.assign(n, 1);
    return f;
  }
};

inline FramePair frame(int i) {
  FramePair f;
  f.rgb = Image(400, 300, 3, 90);
  f.thermal = Image(400, 300, 3, 60);
  f.rgb.at(0, 0, 0) = static_cast<std::uint8_t>(i % 256);
  return f;
}

inline TrackerConfig fast_config() {
  TrackerConfig c;
  c.init_quota.positives = 20;
  c.init_quota.negatives = 40;
  c.update_quota.positives = 5;
  c.update_quota.negatives = 10;
  c.bbreg_samples = 30;
  c.seed = 3;
  return c;
}

struct Harness {
  int fits = 0;
  std::vector<std::pair<int, int>> fit_sizes;
  ConstantFlow* flow = nullptr;
  std::unique_ptr<Tracker> tracker;

  Harness(Script s, double fdx, double fdy, TrackerConfig c = fast_config()) {
    auto be = std::make_unique<ScriptedBackend>();
    be->script = std::move(s);
    be->fits = &fits;
    be->fit_sizes = &fit_sizes;
    auto fl = std::make_unique<ConstantFlow>(fdx, fdy);
    flow = fl.get();
    tracker = std::make_unique<Tracker>(c, std::move(be), std::move(fl));
    tracker->init(frame(0), {180, 130, 40, 40});
  }
};

}  // namespace rgbt::test
