#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "rgbt/dmc.hpp"
#include "rgbt/errors.hpp"
#include "rgbt/evaluation.hpp"
#include "rgbt/image.hpp"
#include "support.hpp"

using namespace rgbt;
namespace fs = std::filesystem;

namespace {

std::vector<BoundingBox> shifted(const std::vector<BoundingBox>& gt, double dx, double dy) {
  auto out = gt;
  for (auto& b : out) {
    b.x += dx;
    b.y += dy;
  }
  return out;
}

std::vector<BoundingBox> random_boxes(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0, 200), size(5, 60);
  std::vector<BoundingBox> v;
  for (int i = 0; i < n; ++i) v.push_back({pos(rng), pos(rng), size(rng), size(rng)});
  return v;
}

std::vector<BoundingBox> jitter(const std::vector<BoundingBox>& gt, std::mt19937_64& rng,
                                double sigma) {
  std::normal_distribution<double> d(0, sigma);
  auto out = gt;
  for (auto& b : out) {
    b.x += d(rng);
    b.y += d(rng);
    b.w = std::max(1.0, b.w + d(rng));
    b.h = std::max(1.0, b.h + d(rng));
  }
  return out;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("precision rate on fixed traces") {
  std::mt19937_64 rng(1);
  const auto gt = random_boxes(40, rng);
  for (double t : {0.5, 5.0, 20.0}) CHECK(precision_rate(gt, gt, t) == 1.0);
  CHECK(precision_rate(shifted(gt, 25, 0), gt, 20) == 0.0);
  const std::vector<BoundingBox> ints = {{3, 4, 10, 12}, {40, 7, 20, 8}};
  CHECK(precision_rate(shifted(ints, 15, 20), ints, 25) == 0.0);
  CHECK(precision_rate(shifted(ints, 15, 20), ints, 25.0001) == 1.0);
  CHECK(gtot_eval_options().pr_threshold == 5.0);
  CHECK(EvalOptions{}.pr_threshold == 20.0);
}

TEST_CASE("mixed trace matches hand enumeration") {
  // gt 40x40; x offsets 0, 5, 19.9, 20, 30 plus one frame without gt.
  // distances: 0 5 19.9 20 30 -> below 20: 3 of 5.
  // overlaps: 1, 1400/1800, 804/2396, 800/2400, 400/2800; grid points
  // i/20 strictly below each: 21 (full overlap counts at 1), 16, 7, 7, 3.
  std::vector<BoundingBox> gt(6, BoundingBox{50, 50, 40, 40});
  gt[3] = {0, 0, 0, 0};
  std::vector<BoundingBox> pred = gt;
  const double dx[] = {0, 5, 19.9, 0, 20, 30};
  for (int i = 0; i < 6; ++i) pred[i] = {50 + dx[i], 50, 40, 40};

  CHECK(precision_rate(pred, gt, 20) == doctest::Approx(3.0 / 5));
  CHECK(precision_rate(pred, gt, 5) == doctest::Approx(1.0 / 5));
  CHECK(precision_rate(pred, gt, 5.0001) == doctest::Approx(2.0 / 5));
  CHECK(success_rate_auc(pred, gt) == doctest::Approx((21 + 16 + 7 + 7 + 3) / 105.0));
  const auto c = success_curve(pred, gt);
  REQUIRE(c.size() == 21);
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[7] == doctest::Approx(2.0 / 5));   // 0.35: overlaps 1 and 0.78
  CHECK(c[20] == doctest::Approx(1.0 / 5));  // only the exact match
}

TEST_CASE("success AUC closed forms") {
  std::mt19937_64 rng(2);
  const auto gt = random_boxes(30, rng);
  CHECK(success_rate_auc(gt, gt) == 1.0);
  CHECK(success_rate_auc(shifted(gt, 500, 500), gt) == 0.0);

  std::vector<BoundingBox> g(17, BoundingBox{10, 10, 10, 10});
  std::vector<BoundingBox> half(17, BoundingBox{10, 10, 10, 5});
  REQUIRE(iou(half[0], g[0]) == 0.5);
  CHECK(success_rate_auc(half, g) == doctest::Approx(10.0 / 21));
  CHECK_THROWS_AS(success_rate_auc(half, g, 1), std::invalid_argument);
  half.pop_back();
  CHECK_THROWS_AS(precision_rate(half, g, 20), std::invalid_argument);
}

TEST_CASE("curves are monotone and bounded") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto gt = random_boxes(50, rng);
    const auto pred = jitter(gt, rng, 3.0 + rep);
    const EvalReport r = attribute_report({{"a", {"NO"}, pred, gt}});
    REQUIRE(r.pr_curve.size() == 51);
    REQUIRE(r.sr_curve.size() == 21);
    for (std::size_t i = 1; i < r.pr_curve.size(); ++i) CHECK(r.pr_curve[i] >= r.pr_curve[i - 1]);
    for (std::size_t i = 1; i < r.sr_curve.size(); ++i) CHECK(r.sr_curve[i] <= r.sr_curve[i - 1]);
    for (double v : r.pr_curve) CHECK((v >= 0 && v <= 1));
    for (double v : r.sr_curve) CHECK((v >= 0 && v <= 1));
    CHECK(r.pr_at == r.pr_curve[20]);
  }
}

TEST_CASE("aggregation is frame pooled and order independent") {
  std::mt19937_64 rng(4);
  std::vector<SequenceResult> seqs;
  for (int i = 0; i < 6; ++i) {
    const auto gt = random_boxes(10 + 7 * i, rng);
    seqs.push_back({"s" + std::to_string(i), {"NO"}, jitter(gt, rng, 2.0 + 4 * i), gt});
  }
  const EvalReport a = attribute_report(seqs);

  // Pooled oracle: one long trace.
  std::vector<BoundingBox> p, g;
  for (const auto& s : seqs) {
    p.insert(p.end(), s.pred.begin(), s.pred.end());
    g.insert(g.end(), s.gt.begin(), s.gt.end());
  }
  CHECK(a.pr_at == doctest::Approx(precision_rate(p, g, 20)));
  CHECK(a.sr_auc == doctest::Approx(success_rate_auc(p, g)));
  CHECK(a.frames == static_cast<int>(g.size()));

  auto shuffled = seqs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (auto& s : shuffled) {
    std::vector<int> idx(s.gt.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    SequenceResult t = s;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      t.pred[i] = s.pred[idx[i]];
      t.gt[i] = s.gt[idx[i]];
    }
    s = t;
  }
  const EvalReport b = attribute_report(shuffled);
  CHECK(b.pr_at == doctest::Approx(a.pr_at));
  CHECK(b.sr_auc == doctest::Approx(a.sr_auc));

  EvalOptions per;
  per.per_sequence_mean = true;
  const EvalReport m = attribute_report(seqs, per);
  double pr = 0, sr = 0;
  for (const auto& s : seqs) {
    pr += precision_rate(s.pred, s.gt, 20);
    sr += success_rate_auc(s.pred, s.gt);
  }
  CHECK(m.pr_at == doctest::Approx(pr / seqs.size()));
  CHECK(m.sr_auc == doctest::Approx(sr / seqs.size()));
}

TEST_CASE("attribute subsets") {
  std::mt19937_64 rng(5);
  std::vector<SequenceResult> seqs;
  for (int i = 0; i < 4; ++i) {
    const auto gt = random_boxes(20, rng);
    seqs.push_back({"s", {"CM", "NO"}, jitter(gt, rng, 5.0 * (i + 1)), gt});
  }
  seqs[3].attributes.insert("LI");
  const EvalReport r = attribute_report(seqs);
  REQUIRE(r.per_attribute.count("CM"));
  CHECK(r.per_attribute.at("CM").pr == r.pr_at);
  CHECK(r.per_attribute.at("CM").sr == r.sr_auc);
  CHECK(r.per_attribute.at("CM").sequences == 4);
  CHECK(r.per_attribute.at("LI").pr == precision_rate(seqs[3].pred, seqs[3].gt, 20));
  CHECK(r.per_attribute.count("TC") == 0);
  CHECK(std::any_of(r.warnings.begin(), r.warnings.end(),
                    [](const std::string& w) { return w.find("TC") != std::string::npos; }));
  CHECK(r.warnings.size() == attribute_vocabulary().size() - 3);
}

TEST_CASE("reference scores and variants") {
  bool found = false;
  for (const auto& s : reference_scores())
    if (s.dataset == "RGBT234" && s.variant == "full") {
      CHECK(s.pr == 0.839);
      CHECK(s.sr == 0.593);
      found = true;
    }
  CHECK(found);
  CHECK(ablation_variants().size() == 4);
  CHECK_FALSE(find_variant("v1").dmc);
  CHECK_FALSE(find_variant("v1").rs);
  CHECK(find_variant("v2").dmc);
  CHECK_FALSE(find_variant("v2").rs);
  CHECK_FALSE(find_variant("v3").dmc);
  CHECK(find_variant("v3").rs);
  CHECK(find_variant("full").dmc);
  CHECK(find_variant("full").rs);
  CHECK_THROWS_AS(find_variant("v9"), ConfigError);
  CHECK(default_u_grid() == std::vector<double>{0, 5, 10, 15, 20, 25, 30});
}

TEST_CASE("ablation wiring, sweep rows and outputs") {
  SynthSpec s;
  s.length = 5;
  s.camera_events = {{2, 14, 0}};
  std::vector<RgbtSequence> data = {synth_generate(s)};
  s.seed = 2;
  s.camera_events.clear();
  data.push_back(synth_generate(s));
  const auto net = build_network<float>(test::tiny_model_config(), 1, 2);

  TrackerConfig c;
  c.init_quota.positives = 20;
  c.init_quota.negatives = 40;
  c.update_quota.positives = 5;
  c.update_quota.negatives = 10;
  c.bbreg_samples = 30;
  c.candidates = 32;
  c.seed = 3;

  const long before = dmc_forward_count();
  auto v1 = ablation_run(data, net, net, c, {find_variant("v1")}, {}, 1);
  CHECK(dmc_forward_count() == before);
  for (const auto& t : v1[0].tracks) CHECK(t.flow_calls == 0);
  auto full = ablation_run(data, net, net, c, {find_variant("full")}, {}, 2);
  CHECK(dmc_forward_count() > before);
  CHECK(full[0].report.frames == 10);

  // Parallel tracking equals serial tracking.
  const auto serial = track_all(data, net, c, 1);
  const auto par = track_all(data, net, c, 2);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(serial[i].boxes == par[i].boxes);

  const auto rows = u_sweep(data, net, c, default_u_grid(), {}, 1);
  REQUIRE(rows.size() == 7);
  CHECK(rows[3].u == 15);

  const fs::path dir = fs::temp_directory_path() / "rgbt_test_eval";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_rows_csv((dir / "sweep.csv").string(), rows);
  const std::string csv = read_all(dir / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  CHECK(csv.rfind("variant,u,pr,sr,frames", 0) == 0);

  write_rows_csv((dir / "ablation.csv").string(), full);
  CHECK(read_all(dir / "ablation.csv").find("0.839,0.593") != std::string::npos);

  write_curves_csv((dir / "pr.csv").string(), (dir / "sr.csv").string(),
                   {{"full", full[0].report}}, {});
  const std::string pr = read_all(dir / "pr.csv");
  CHECK(std::count(pr.begin(), pr.end(), '\n') == 52);
  const std::string sr = read_all(dir / "sr.csv");
  CHECK(std::count(sr.begin(), sr.end(), '\n') == 22);

  PlotSeries series{"full", {}, full[0].report.pr_curve};
  for (int t = 0; t <= 50; ++t) series.x.push_back(t);
  plot_lines((dir / "pr.png").string(), "precision", "px", "PR", {series});
  const Image img = read_image((dir / "pr.png").string());
  CHECK(img.width == 640);
  CHECK(img.height == 480);
}
