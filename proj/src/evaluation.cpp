#include "rgbt/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rgbt/errors.hpp"
#include "rgbt/parallel.hpp"

namespace rgbt {

namespace {

std::string num(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw LoadError(tmp + ": cannot open for writing");
    out << text;
    if (!out) throw LoadError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

void check_lengths(const std::vector<BoundingBox>& pred,
                   const std::vector<BoundingBox>& gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("prediction has " + std::to_string(pred.size()) +
                                " boxes, ground truth " + std::to_string(gt.size()));
  }
}

struct FrameStats {
  std::vector<double> dist;
  std::vector<double> overlap;
};

void collect(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& gt,
             FrameStats& s) {
  check_lengths(pred, gt);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i].valid()) continue;
    s.dist.push_back(center_distance(pred[i], gt[i]));
    s.overlap.push_back(pred[i].valid() ? iou(pred[i], gt[i]) : 0.0);
  }
}

double fraction_below(const std::vector<double>& d, double thr) {
  if (d.empty()) return 0;
  long n = std::count_if(d.begin(), d.end(), [&](double v) { return v < thr; });
  return static_cast<double>(n) / d.size();
}

std::vector<double> sr_curve_of(const std::vector<double>& overlap, int points) {
  if (points < 2) throw std::invalid_argument("success grid needs at least 2 points");
  std::vector<double> c(points, 0.0);
  if (overlap.empty()) return c;
  for (int i = 0; i < points; ++i) {
    const double tau = static_cast<double>(i) / (points - 1);
    long n = std::count_if(overlap.begin(), overlap.end(),
                           [&](double v) { return v > tau || v >= 1.0 - 1e-12; });
    c[i] = static_cast<double>(n) / overlap.size();
  }
  return c;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

struct Curves {
  std::vector<double> pr;
  std::vector<double> sr;
  double pr_at = 0;
  int frames = 0;
};

Curves curves_of(const FrameStats& s, const EvalOptions& opt) {
  Curves c;
  for (int t = 0; t <= opt.pr_max; ++t) c.pr.push_back(fraction_below(s.dist, t));
  c.sr = sr_curve_of(s.overlap, opt.sr_points);
  c.pr_at = fraction_below(s.dist, opt.pr_threshold);
  c.frames = static_cast<int>(s.dist.size());
  return c;
}

// Pooled: all frames together. Otherwise the unweighted mean of each
// sequence's curves.
Curves aggregate(const std::vector<const SequenceResult*>& seqs, const EvalOptions& opt) {
  if (!opt.per_sequence_mean) {
    FrameStats s;
    for (auto* r : seqs) collect(r->pred, r->gt, s);
    return curves_of(s, opt);
  }
  Curves out;
  out.pr.assign(opt.pr_max + 1, 0.0);
  out.sr.assign(opt.sr_points, 0.0);
  int used = 0;
  for (auto* r : seqs) {
    FrameStats s;
    collect(r->pred, r->gt, s);
    if (s.dist.empty()) continue;
    Curves c = curves_of(s, opt);
    for (std::size_t i = 0; i < c.pr.size(); ++i) out.pr[i] += c.pr[i];
    for (std::size_t i = 0; i < c.sr.size(); ++i) out.sr[i] += c.sr[i];
    out.pr_at += c.pr_at;
    out.frames += c.frames;
    ++used;
  }
  if (used > 0) {
    for (auto& v : out.pr) v /= used;
    for (auto& v : out.sr) v /= used;
    out.pr_at /= used;
  }
  return out;
}

}  // namespace

EvalOptions gtot_eval_options() {
  EvalOptions o;
  o.pr_threshold = 5.0;
  return o;
}

double center_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

double precision_rate(const std::vector<BoundingBox>& pred,
                      const std::vector<BoundingBox>& gt, double threshold_px) {
  FrameStats s;
  collect(pred, gt, s);
  return fraction_below(s.dist, threshold_px);
}

std::vector<double> success_curve(const std::vector<BoundingBox>& pred,
                                  const std::vector<BoundingBox>& gt, int points) {
  FrameStats s;
  collect(pred, gt, s);
  return sr_curve_of(s.overlap, points);
}

double success_rate_auc(const std::vector<BoundingBox>& pred,
                        const std::vector<BoundingBox>& gt, int points) {
  return mean(success_curve(pred, gt, points));
}

EvalReport attribute_report(const std::vector<SequenceResult>& results,
                            const EvalOptions& opt) {
  if (opt.pr_max < 0) throw std::invalid_argument("pr_max must be >= 0");
  EvalReport rep;
  std::vector<const SequenceResult*> all;
  for (const auto& r : results) all.push_back(&r);
  Curves c = aggregate(all, opt);
  rep.pr_curve = c.pr;
  rep.sr_curve = c.sr;
  rep.pr_at = c.pr_at;
  rep.sr_auc = mean(c.sr);
  rep.frames = c.frames;

  for (const auto& tag : attribute_vocabulary()) {
    std::vector<const SequenceResult*> sub;
    for (const auto& r : results)
      if (r.attributes.count(tag)) sub.push_back(&r);
    if (sub.empty()) {
      rep.warnings.push_back("attribute " + tag + " has no sequences; omitted");
      continue;
    }
    Curves a = aggregate(sub, opt);
    rep.per_attribute[tag] = {a.pr_at, mean(a.sr), a.frames,
                              static_cast<int>(sub.size())};
  }
  return rep;
}

const std::vector<ReferenceScore>& reference_scores() {
  static const std::vector<ReferenceScore> v = {
      {"RGBT234", "v1", 0.802, 0.565}, {"RGBT234", "v2", 0.820, 0.584},
      {"RGBT234", "v3", 0.809, 0.569}, {"RGBT234", "full", 0.839, 0.593},
      {"GTOT", "v1", 0.866, 0.693},    {"GTOT", "v2", 0.909, 0.733},
      {"GTOT", "v3", 0.866, 0.693},    {"GTOT", "full", 0.909, 0.733}};
  return v;
}

const std::vector<VariantSpec>& ablation_variants() {
  static const std::vector<VariantSpec> v = {
      {"v1", false, false}, {"v2", true, false}, {"v3", false, true}, {"full", true, true}};
  return v;
}

VariantSpec find_variant(const std::string& name) {
  for (const auto& v : ablation_variants())
    if (v.name == name) return v;
  throw ConfigError("unknown variant: " + name);
}

std::vector<TrackResult> track_all(const std::vector<RgbtSequence>& data,
                                   const NetworkParams<float>& net,
                                   const TrackerConfig& config, int workers) {
  std::vector<TrackResult> out(data.size());
  parallel_for(static_cast<int>(data.size()), workers,
               [&](int i) { out[i] = track_sequence(data[i], net, config); });
  return out;
}

std::vector<SequenceResult> to_sequence_results(const std::vector<RgbtSequence>& data,
                                                const std::vector<TrackResult>& tracks) {
  if (data.size() != tracks.size())
    throw std::invalid_argument("tracks do not match the dataset");
  std::vector<SequenceResult> out;
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back({data[i].name, data[i].attributes, tracks[i].boxes, data[i].gt});
  return out;
}

std::vector<AblationRow> ablation_run(const std::vector<RgbtSequence>& data,
                                      const NetworkParams<float>& dmc_net,
                                      const NetworkParams<float>& plain_net,
                                      const TrackerConfig& base,
                                      const std::vector<VariantSpec>& variants,
                                      const EvalOptions& opt, int workers) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    TrackerConfig c = base;
    c.use_dmc = v.dmc;
    c.use_resampling = v.rs;
    AblationRow row{v.name, c.u, {}, {}};
    row.tracks = track_all(data, v.dmc ? dmc_net : plain_net, c, workers);
    row.report = attribute_report(to_sequence_results(data, row.tracks), opt);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> u_sweep(const std::vector<RgbtSequence>& data,
                                 const NetworkParams<float>& net,
                                 const TrackerConfig& base,
                                 const std::vector<double>& us,
                                 const EvalOptions& opt, int workers) {
  std::vector<AblationRow> rows;
  for (double u : us) {
    TrackerConfig c = base;
    c.u = u;
    c.use_resampling = true;
    validate(c);
    AblationRow row{"u" + num(u), u, {}, {}};
    row.tracks = track_all(data, net, c, workers);
    row.report = attribute_report(to_sequence_results(data, row.tracks), opt);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_rows_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::set<std::string> tags;
  for (const auto& r : rows)
    for (const auto& [t, m] : r.report.per_attribute) tags.insert(t);
  std::ostringstream os;
  os << "variant,u,pr,sr,frames";
  for (const auto& t : tags) os << ',' << t << "_pr," << t << "_sr";
  os << ",ref_pr,ref_sr\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << num(r.u) << ',' << num(r.report.pr_at) << ','
       << num(r.report.sr_auc) << ',' << r.report.frames;
    for (const auto& t : tags) {
      auto it = r.report.per_attribute.find(t);
      if (it == r.report.per_attribute.end()) os << ",,";
      else os << ',' << num(it->second.pr) << ',' << num(it->second.sr);
    }
    const ReferenceScore* ref = nullptr;
    for (const auto& rs : reference_scores())
      if (rs.dataset == "RGBT234" && rs.variant == r.variant) ref = &rs;
    if (ref) os << ',' << num(ref->pr) << ',' << num(ref->sr) << '\n';
    else os << ",,\n";
  }
  write_text(path, os.str());
}

void write_curves_csv(const std::string& pr_path, const std::string& sr_path,
                      const std::vector<std::pair<std::string, EvalReport>>& reports,
                      const EvalOptions& opt) {
  std::ostringstream pr, sr;
  pr << "threshold";
  sr << "threshold";
  for (const auto& [name, r] : reports) {
    pr << ',' << name;
    sr << ',' << name;
  }
  pr << '\n';
  sr << '\n';
  for (int t = 0; t <= opt.pr_max; ++t) {
    pr << t;
    for (const auto& [name, r] : reports)
      pr << ',' << (t < static_cast<int>(r.pr_curve.size()) ? num(r.pr_curve[t]) : "");
    pr << '\n';
  }
  for (int i = 0; i < opt.sr_points; ++i) {
    sr << num(static_cast<double>(i) / (opt.sr_points - 1));
    for (const auto& [name, r] : reports)
      sr << ',' << (i < static_cast<int>(r.sr_curve.size()) ? num(r.sr_curve[i]) : "");
    sr << '\n';
  }
  write_text(pr_path, pr.str());
  write_text(sr_path, sr.str());
}

void plot_lines(const std::string& path, const std::string& title,
                const std::string& xlabel, const std::string& ylabel,
                const std::vector<PlotSeries>& series) {
  const int W = 640, H = 480, left = 70, right = 20, top = 40, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) { x0 = x1 = s.x[i]; first = false; }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  for (const auto& s : series)
    for (double v : s.y) y1 = std::max(y1, v);

  auto px = [&](double x, double y) {
    return cv::Point(static_cast<int>(left + (x - x0) / (x1 - x0) * (W - left - right)),
                     static_cast<int>(H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom)));
  };
  const auto black = cv::Scalar(0, 0, 0);
  const auto grey = cv::Scalar(220, 220, 220);
  const int font = cv::FONT_HERSHEY_SIMPLEX;

  // 1, 2 or 5 times a power of ten, about five steps over the range
  auto tick_step = [](double range) {
    const double raw = range / 5;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0})
      if (m * mag >= raw * 0.99) return m * mag;
    return 10 * mag;
  };
  const double xs_step = tick_step(x1 - x0), ys_step = tick_step(y1 - y0);
  for (double xv = std::ceil(x0 / xs_step - 1e-9) * xs_step; xv <= x1 + 1e-9; xv += xs_step) {
    cv::line(img, px(xv, y0), px(xv, y1), grey, 1);
    std::ostringstream xs;
    xs.precision(3);
    xs << (std::abs(xv) < 1e-12 ? 0.0 : xv);
    cv::putText(img, xs.str(), px(xv, y0) + cv::Point(-10, 20), font, 0.4, black);
  }
  for (double yv = std::ceil(y0 / ys_step - 1e-9) * ys_step; yv <= y1 + 1e-9; yv += ys_step) {
    cv::line(img, px(x0, yv), px(x1, yv), grey, 1);
    std::ostringstream ys;
    ys.precision(2);
    ys << (std::abs(yv) < 1e-12 ? 0.0 : yv);
    cv::putText(img, ys.str(), px(x0, yv) + cv::Point(-40, 4), font, 0.4, black);
  }
  cv::rectangle(img, px(x0, y1), px(x1, y0), black, 1);
  cv::putText(img, title, {left, 25}, font, 0.6, black, 1, cv::LINE_AA);
  cv::putText(img, xlabel, {W / 2 - 40, H - 15}, font, 0.5, black, 1, cv::LINE_AA);
  cv::putText(img, ylabel, {5, top - 10}, font, 0.5, black, 1, cv::LINE_AA);

  static const cv::Scalar palette[] = {{200, 60, 30},  {30, 120, 230}, {40, 160, 40},
                                       {30, 30, 200},  {150, 50, 150}, {0, 150, 150},
                                       {100, 100, 100}};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const auto color = palette[k % std::size(palette)];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 1; i < n; ++i)
      cv::line(img, px(s.x[i - 1], s.y[i - 1]), px(s.x[i], s.y[i]), color, 2, cv::LINE_AA);
    if (n == 1) cv::circle(img, px(s.x[0], s.y[0]), 3, color, cv::FILLED);
    const cv::Point at(W - right - 150, top + 20 + static_cast<int>(k) * 18);
    cv::line(img, at, at + cv::Point(20, 0), color, 2);
    cv::putText(img, s.name, at + cv::Point(26, 4), font, 0.45, black, 1, cv::LINE_AA);
  }

  const std::string tmp = path + ".tmp.png";
  if (!cv::imwrite(tmp, img)) throw LoadError(path + ": cannot write plot");
  std::filesystem::rename(tmp, path);
}

}  // namespace rgbt
