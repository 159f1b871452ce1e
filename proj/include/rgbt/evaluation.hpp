#pragma once

// Precision / success metrics, attribute reports, and the ablation and
// threshold-sweep harnesses.

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rgbt/data.hpp"
#include "rgbt/geometry.hpp"
#include "rgbt/network.hpp"
#include "rgbt/tracker.hpp"

namespace rgbt {

struct EvalOptions {
  double pr_threshold = 20.0;  // 5 for GTOT
  int pr_max = 50;             // curve thresholds 0..pr_max px
  int sr_points = 21;          // overlap grid over [0, 1] with both ends
  bool per_sequence_mean = false;
};

EvalOptions gtot_eval_options();

double center_distance(const BoundingBox& a, const BoundingBox& b);

/// Fraction of frames with center distance strictly below threshold_px.
/// Frames whose ground truth is not a valid box are skipped.
double precision_rate(const std::vector<BoundingBox>& pred,
                      const std::vector<BoundingBox>& gt, double threshold_px);

/// Success at each grid threshold tau: overlap > tau, and a full overlap
/// counts at tau = 1 as well.
std::vector<double> success_curve(const std::vector<BoundingBox>& pred,
                                  const std::vector<BoundingBox>& gt,
                                  int points = 21);

/// Mean of the success curve.
double success_rate_auc(const std::vector<BoundingBox>& pred,
                        const std::vector<BoundingBox>& gt, int points = 21);

struct SequenceResult {
  std::string name;
  std::set<std::string> attributes;
  std::vector<BoundingBox> pred;
  std::vector<BoundingBox> gt;
};

struct Metrics {
  double pr = 0;
  double sr = 0;
  int frames = 0;
  int sequences = 0;
};

struct EvalReport {
  std::vector<double> pr_curve;  // index = threshold in px
  std::vector<double> sr_curve;  // index i = threshold i / (points - 1)
  double pr_at = 0;
  double sr_auc = 0;
  int frames = 0;
  std::map<std::string, Metrics> per_attribute;
  std::vector<std::string> warnings;
};

/// Frame-pooled metrics over all sequences (or the mean of per-sequence
/// metrics) plus the same for every tag present. Tags without sequences are
/// left out and reported in `warnings`.
EvalReport attribute_report(const std::vector<SequenceResult>& results,
                            const EvalOptions& opt = {});

/// Published overall PR / SR per dataset and ablation variant, kept for
/// annotation only.
struct ReferenceScore {
  std::string dataset;
  std::string variant;
  double pr;
  double sr;
};
const std::vector<ReferenceScore>& reference_scores();

// ---------------------------------------------------------------- ablation

struct VariantSpec {
  std::string name;
  bool dmc = true;
  bool rs = true;
};

/// v1 (no DMC, no re-sampling), v2 (DMC only), v3 (re-sampling only), full.
const std::vector<VariantSpec>& ablation_variants();
VariantSpec find_variant(const std::string& name);

struct AblationRow {
  std::string variant;
  double u = 0;
  EvalReport report;
  std::vector<TrackResult> tracks;
};

/// Tracks every sequence with `workers` threads; order of the output
/// follows `data`.
std::vector<TrackResult> track_all(const std::vector<RgbtSequence>& data,
                                   const NetworkParams<float>& net,
                                   const TrackerConfig& config, int workers);

std::vector<SequenceResult> to_sequence_results(
    const std::vector<RgbtSequence>& data, const std::vector<TrackResult>& tracks);

/// Runs the listed variants. DMC variants use `dmc_net`, the others
/// `plain_net` (trained without the block).
std::vector<AblationRow> ablation_run(const std::vector<RgbtSequence>& data,
                                      const NetworkParams<float>& dmc_net,
                                      const NetworkParams<float>& plain_net,
                                      const TrackerConfig& base,
                                      const std::vector<VariantSpec>& variants,
                                      const EvalOptions& opt, int workers);

inline const std::vector<double>& default_u_grid() {
  static const std::vector<double> g = {0, 5, 10, 15, 20, 25, 30};
  return g;
}

/// The full tracker at each threshold u.
std::vector<AblationRow> u_sweep(const std::vector<RgbtSequence>& data,
                                 const NetworkParams<float>& net,
                                 const TrackerConfig& base,
                                 const std::vector<double>& us,
                                 const EvalOptions& opt, int workers);

/// variant,u,pr,sr,frames, a pr/sr column pair per attribute, then the
/// RGBT234 reference pr/sr of the variant when one exists.
void write_rows_csv(const std::string& path, const std::vector<AblationRow>& rows);

/// threshold,<name>... for PR and SR curves.
void write_curves_csv(const std::string& pr_path, const std::string& sr_path,
                      const std::vector<std::pair<std::string, EvalReport>>& reports,
                      const EvalOptions& opt);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line plot with axes, ticks and a legend, written as PNG.
void plot_lines(const std::string& path, const std::string& title,
                const std::string& xlabel, const std::string& ylabel,
                const std::vector<PlotSeries>& series);

}  // namespace rgbt
