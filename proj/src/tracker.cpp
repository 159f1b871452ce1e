#include "rgbt/tracker.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "rgbt/errors.hpp"
#include "rgbt/trainer.hpp"

namespace rgbt {

void validate(const TrackerConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("tracker: " + m); };
  if (c.candidates < 1) fail("candidates must be >= 1");
  if (c.top_k < 1) fail("top_k must be >= 1");
  if (c.short_frames < 1 || c.long_frames < 1) fail("memory capacities must be >= 1");
  if (c.long_interval < 1) fail("long_interval must be >= 1");
  if (c.u < 0) fail("u must be >= 0");
  if (c.context < 0) fail("context must be >= 0");
  for (const auto* q : {&c.init_quota, &c.update_quota}) {
    if (q->positives < 1 || q->negatives < 1) fail("sample quotas must be >= 1");
    if (!(0 <= q->neg_thr && q->neg_thr < q->pos_thr && q->pos_thr <= 1)) {
      fail("thresholds must satisfy 0 <= neg_thr < pos_thr <= 1");
    }
  }
  for (const auto* f : {&c.init_fit, &c.update_fit}) {
    if (f->iterations < 0 || f->batch_pos < 1 || f->batch_neg < 1) {
      fail("fit schedule needs iterations >= 0 and positive batch sizes");
    }
    if (f->lr_fc < 0 || f->lr_head < 0) fail("negative learning rate");
  }
  if (c.use_bbreg && c.bbreg_samples < 2) fail("bbreg_samples must be >= 2");
  if (c.flow != "block" && c.flow != "dis") fail("unknown flow estimator '" + c.flow + "'");
}

TrackerConfig desk_tracker_config() {
  TrackerConfig c;
  for (auto* f : {&c.init_fit, &c.update_fit}) {
    f->lr_fc *= 100;
    f->lr_head *= 100;
  }
  c.candidates = 64;
  c.init_quota.positives = 100;
  c.init_quota.negatives = 400;
  c.update_quota.positives = 20;
  c.update_quota.negatives = 60;
  c.bbreg_samples = 200;
  c.init_fit.iterations = 30;
  return c;
}

// ---------------------------------------------------------------- backend

NetworkBackend::NetworkBackend(const NetworkParams<float>& net, bool use_dmc,
                               double context, std::uint64_t seed)
    : net_(net), use_dmc_(use_dmc), context_(context), rng_(seed) {
  net_.reset_heads(1, rng_);
}

Tensor<float> NetworkBackend::features(const FramePair& frame,
                                       const std::vector<BoundingBox>& boxes) {
  const int s = net_.config.input_size;
  if (boxes.empty()) return Tensor<float>(0, classifier_input_width(net_.config), 1, 1);
  const Tensor<float> rgb = crop_patches(frame.rgb, boxes, s, context_);
  const Tensor<float> t = crop_patches(frame.thermal, boxes, s, context_);
  return extract_features(net_, rgb, t, use_dmc_);
}

std::vector<ScorePair> NetworkBackend::scores(const Tensor<float>& features) {
  if (features.n() == 0) return {};
  return to_score_pairs(classify_features<float>(net_, features, 0, false, nullptr, nullptr));
}

void NetworkBackend::fit(const Tensor<float>& pos, const Tensor<float>& neg,
                         const FitSchedule& s) {
  if (pos.n() == 0 || neg.n() == 0) {
    throw TrainingError("fit: need both positive and negative samples");
  }
  const std::size_t d = pos.shape().per_sample();
  std::array<double, 5> rates{};
  rates[static_cast<int>(ParamGroup::fc_shared)] = s.lr_fc;
  rates[static_cast<int>(ParamGroup::fc_domain)] = s.lr_head;
  Sgd<float> sgd(rates, s.momentum, s.weight_decay);
  const std::vector<Param<float>*> params = {&net_.fc4.weight, &net_.fc4.bias,
                                             &net_.fc5.weight, &net_.fc5.bias,
                                             &net_.heads[0].weight, &net_.heads[0].bias};

  struct Cycle {
    std::vector<int> order;
    std::size_t next = 0;
  };
  auto make = [&](int n) {
    Cycle c;
    c.order.resize(n);
    std::iota(c.order.begin(), c.order.end(), 0);
    std::shuffle(c.order.begin(), c.order.end(), rng_);
    return c;
  };
  Cycle cp = make(pos.n()), cn = make(neg.n());
  auto take = [&](Cycle& c) {
    if (c.next == c.order.size()) {
      std::shuffle(c.order.begin(), c.order.end(), rng_);
      c.next = 0;
    }
    return c.order[c.next++];
  };

  const int b = s.batch_pos + s.batch_neg;
  Tensor<float> x(b, static_cast<int>(d), 1, 1);
  std::vector<int> labels(b);
  for (int it = 0; it < s.iterations; ++it) {
    for (int i = 0; i < b; ++i) {
      const bool is_pos = i < s.batch_pos;
      const Tensor<float>& src = is_pos ? pos : neg;
      const int k = take(is_pos ? cp : cn);
      std::copy_n(src.data() + k * d, d, x.data() + i * d);
      labels[i] = is_pos ? 1 : 0;
    }
    for (auto* p : params) p->grad.zero();
    ClassifierCache<float> cache;
    const auto logits = classify_features(net_, x, 0, true, &rng_, &cache);
    Tensor<float> dl;
    softmax_loss(logits, labels, &dl);
    backward_classifier(net_, 0, cache, dl);
    sgd.step(params);
  }
}

// ---------------------------------------------------------------- helpers

TopK select_top_k(const std::vector<double>& scores, int k) {
  TopK out;
  const int n = static_cast<int>(scores.size());
  k = std::min(k, n);
  if (k <= 0) return out;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  out.indices.assign(idx.begin(), idx.begin() + k);
  double s = 0;
  for (int i : out.indices) s += scores[i];
  out.mean = s / k;
  return out;
}

BoundingBox mean_box(const std::vector<BoundingBox>& boxes,
                     const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("mean_box: no boxes");
  BoundingBox m{0, 0, 0, 0};
  for (int i : indices) {
    m.x += boxes[i].x;
    m.y += boxes[i].y;
    m.w += boxes[i].w;
    m.h += boxes[i].h;
  }
  const double n = static_cast<double>(indices.size());
  return {m.x / n, m.y / n, m.w / n, m.h / n};
}

void SampleMemory::push(MemoryFrame f) {
  frames_.push_back(std::move(f));
  while (static_cast<int>(frames_.size()) > capacity_) frames_.pop_front();
}

namespace {

Tensor<float> stack(const std::deque<MemoryFrame>& frames, bool pos) {
  int n = 0;
  std::size_t d = 0;
  for (const auto& f : frames) {
    const auto& t = pos ? f.pos : f.neg;
    n += t.n();
    if (t.n() > 0) d = t.shape().per_sample();
  }
  Tensor<float> out(n, static_cast<int>(d), 1, 1);
  std::size_t off = 0;
  for (const auto& f : frames) {
    const auto& t = pos ? f.pos : f.neg;
    std::copy(t.data(), t.data() + t.size(), out.data() + off);
    off += t.size();
  }
  return out;
}

std::vector<double> positive_scores(const std::vector<ScorePair>& s) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i].pos;
  return out;
}

bool overlaps(const BoundingBox& b, const ImageBounds& bounds) {
  return b.valid() && b.x < bounds.width && b.y < bounds.height && b.x + b.w > 0 &&
         b.y + b.h > 0;
}

}  // namespace

Tensor<float> SampleMemory::positives() const { return stack(frames_, true); }
Tensor<float> SampleMemory::negatives() const { return stack(frames_, false); }

// ---------------------------------------------------------------- tracker

Tracker::Tracker(TrackerConfig config, std::unique_ptr<TrackerBackend> backend,
                 std::unique_ptr<FlowEstimator> flow)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      flow_(flow ? std::move(flow) : make_flow_estimator(config_.flow)),
      rng_(config_.seed) {
  validate(config_);
  if (!backend_) throw std::invalid_argument("Tracker: backend is null");
  state_.short_mem = SampleMemory(config_.short_frames);
  state_.long_mem = SampleMemory(config_.long_frames);
}

GrayImage Tracker::gray_of(const FramePair& frame) const {
  return to_gray(config_.flow_from_thermal ? frame.thermal : frame.rgb);
}

MemoryFrame Tracker::draw_memory(const FramePair& frame, const BoundingBox& box) {
  const auto s = draw_labeled_samples(box, frame.bounds(), config_.update_quota, rng_);
  return {backend_->features(frame, s.positives), backend_->features(frame, s.negatives)};
}

void Tracker::init(const FramePair& first, const BoundingBox& gt) {
  const ImageBounds bounds = first.bounds();
  if (!overlaps(gt, bounds)) {
    throw std::invalid_argument("init: ground-truth box does not overlap the image");
  }
  const auto s = draw_labeled_samples(gt, bounds, config_.init_quota, rng_);
  backend_->fit(backend_->features(first, s.positives),
                backend_->features(first, s.negatives), config_.init_fit);

  if (config_.use_bbreg) {
    SampleQuota q;
    q.positives = config_.bbreg_samples;
    q.negatives = 0;
    q.pos_thr = config_.bbreg_iou;
    q.neg_thr = 0;
    q.pos_sampler = config_.bbreg_sampler;
    q.global_neg_fraction = 0;
    q.max_rounds = 1000;
    const auto b = draw_labeled_samples(gt, bounds, q, rng_);
    state_.regressor = train_bbox_regressor(backend_->features(first, b.positives),
                                            b.positives, gt, config_.bbreg_lambda);
  }

  MemoryFrame m = draw_memory(first, gt);
  state_.short_mem.push(m);
  state_.long_mem.push(std::move(m));
  state_.last_box = gt;
  state_.frame_index = 0;
  state_.prev_gray = gray_of(first);
  initialized_ = true;
}

StepResult Tracker::step(const FramePair& frame) {
  if (!initialized_) throw std::logic_error("step: init has not been called");
  ++state_.frame_index;
  const ImageBounds bounds = frame.bounds();
  GrayImage cur = gray_of(frame);

  const auto cands = sample_gaussian(CandidateState::from_box(state_.last_box),
                                     config_.candidates, bounds, rng_, config_.sampler);
  const Tensor<float> feat = backend_->features(frame, cands);
  const TopK top = select_top_k(positive_scores(backend_->scores(feat)), config_.top_k);

  StepResult r;
  r.f = top.mean;
  r.score = top.mean;
  BoundingBox target = mean_box(cands, top.indices);
  r.box = target;

  if (r.f > 0) {
    if (state_.regressor.trained()) {
      std::vector<BoundingBox> refined;
      const std::size_t d = feat.shape().per_sample();
      for (int i : top.indices) {
        refined.push_back(apply_bbox_regression(state_.regressor, feat.data() + i * d, cands[i]));
      }
      std::vector<int> all(refined.size());
      std::iota(all.begin(), all.end(), 0);
      r.box = clamp_box(mean_box(refined, all), bounds);
    }
    MemoryFrame m = draw_memory(frame, target);
    state_.short_mem.push(m);
    state_.long_mem.push(std::move(m));
  } else {
    bool triggered = false;
    if (config_.use_resampling) {
      const BoundingBox region = local_region(state_.last_box, bounds);
      const Displacement flow = mean_displacement(state_.prev_gray, cur, region, *flow_);
      r.flow_computed = true;
      r.motion = detect(camera_motion_from_flow(flow), config_.u);
      triggered = r.motion.triggered;
      if (triggered) {
        const auto rs = resample(state_.last_box, r.motion, bounds);
        const auto rs_scores = positive_scores(backend_->scores(backend_->features(frame, rs)));
        const TopK rtop = select_top_k(rs_scores, config_.top_k);
        r.rf = rs_scores[rtop.indices[0]];
        if (*r.rf > r.f) {
          target = mean_box(rs, rtop.indices);
          r.box = target;
          r.used_resampling = true;
        }
        r.score = std::max(r.f, *r.rf);
      }
    }
    if (!triggered) {
      update_short();
      r.short_update = true;
    }
  }
  state_.last_box = target;

  if (state_.frame_index % config_.long_interval == 0) {
    update_long();
    r.long_update = true;
  }
  state_.prev_gray = std::move(cur);
  return r;
}

void Tracker::update_short() {
  ++short_updates_;
  backend_->fit(state_.short_mem.positives(), state_.short_mem.negatives(),
                config_.update_fit);
}

void Tracker::update_long() {
  ++long_updates_;
  backend_->fit(state_.long_mem.positives(), state_.long_mem.negatives(),
                config_.update_fit);
}

TrackResult track_sequence(const RgbtSequence& seq,
                           const NetworkParams<float>& net,
                           const TrackerConfig& config) {
  if (seq.size() == 0) throw std::invalid_argument("track: empty sequence");
  Tracker tracker(config,
                  std::make_unique<NetworkBackend>(net, config.use_dmc, config.context,
                                                   config.seed),
                  make_flow_estimator(config.flow));
  TrackResult out;
  tracker.init(seq.frame(0), seq.gt[0]);
  out.boxes.push_back(seq.gt[0]);
  for (int i = 1; i < seq.size(); ++i) {
    out.steps.push_back(tracker.step(seq.frame(i)));
    out.boxes.push_back(out.steps.back().box);
  }
  out.flow_calls = tracker.flow().calls();
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

}  // namespace

void write_track_result(const TrackResult& r, const std::string& result_path,
                        const std::string& sidecar_path) {
  write_boxes(result_path, r.boxes);
  if (sidecar_path.empty()) return;
  const std::string tmp = sidecar_path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw LoadError(tmp + ": cannot open for writing");
    out << "frame,f,rf,score,used_resampling,flow_computed,triggered,short_update,long_update\n";
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
      const auto& s = r.steps[i];
      out << i + 1 << ',' << num(s.f) << ',' << (s.rf ? num(*s.rf) : "") << ','
          << num(s.score) << ',' << s.used_resampling << ',' << s.flow_computed << ','
          << s.motion.triggered << ',' << s.short_update << ',' << s.long_update << '\n';
    }
    if (!out) throw LoadError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, sidecar_path);
}

}  // namespace rgbt
