#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dvanet/core/grid.hpp"
#include "dvanet/geometry.hpp"

namespace dva {

// Depth range of interest, bin interval and near/medium/far weighting for the
// weighted relative depth error. Defaults follow the RSRD protocol
// (2~8 m, 0.15 m); KITTI uses 7~50 m with 0.40 m.
struct WrdeConfig {
  double z_min = 2.0;
  double z_max = 8.0;
  double interval = 0.15;
  std::array<double, 3> segment_weights = {1.0, 2.0, 3.0};

  int total_bins() const;  // floor((z_max - z_min) / interval)
  void validate() const;
  bool operator==(const WrdeConfig&) const = default;
};

// Depth-binned mean relative errors. Bins with count 0 carry NaN as the
// missing marker; they never contribute a zero to downstream averages.
struct BinnedErrorCurve {
  std::vector<double> bin_centers;  // meters, ascending
  std::vector<double> mean_errors;  // unitless; NaN where count == 0
  std::vector<std::int64_t> counts;

  int total_bins() const { return int(bin_centers.size()); }
  int contributing_bins() const;
};

struct MetricReport {
  double epe_px = 0.0;
  double rate_gt_1px = 0.0;  // fractions in [0, 1]; CLI renders percentages
  double rate_gt_2px = 0.0;
  double d1_3px = 0.0;
  double wrde = 0.0;
  std::array<double, 3> segment_means = {0.0, 0.0, 0.0};  // near/medium/far
  std::int64_t valid_pixel_count = 0;
};

// --- classical disparity metrics -----------------------------------------

// Mean |pred - gt| over jointly valid pixels.
double epe(const DisparityMap& pred, const DisparityMap& gt);

// Fraction of jointly valid pixels with |pred - gt| strictly greater than
// the threshold ("error larger than n pixels").
double pixel_error_rate(const DisparityMap& pred, const DisparityMap& gt,
                        double threshold_px);

// KITTI devkit outlier rule: |err| > abs_px AND |err| > rel * gt.
struct D1Thresholds {
  double abs_px = 3.0;
  double rel = 0.05;
};
double d1_rate(const DisparityMap& pred, const DisparityMap& gt,
               const D1Thresholds& th = {});

// --- depth-wise metrics ---------------------------------------------------

// Per-pixel |1 - d_gt / d_hat|; equals |z_gt - z_hat| / z_gt under the
// rectified model for any f, b > 0. Pixels with d_hat <= epsilon are masked.
MaskedGrid relative_depth_error(const DisparityMap& pred, const DisparityMap& gt);

// Depth-form twin of the above: |z_gt - z_hat| / z_gt on jointly valid
// pixels. Both routes are tested equal.
MaskedGrid relative_depth_error_metric(const DepthMap& pred_z, const DepthMap& gt_z);

// Bin i covers [z_min + i*interval, z_min + (i+1)*interval); pixels outside
// [z_min, z_max) are ignored. Mean of rel_err per bin.
BinnedErrorCurve bin_errors(const DepthMap& gt_depth, const MaskedGrid& rel_err,
                            const WrdeConfig& config);

// Per-bin weights of the normalized 1:2:3 scheme over N contributing bins:
// 1/(2N) for the near third, 1/N for the middle, 3/(2N) for the far third.
// Boundaries at floor(N/3) and floor(2N/3); for N divisible by 3 the weights
// sum to exactly 1, otherwise the (documented) raw sums are kept.
std::vector<double> wrde_weights(int contributing_n);

// Weighted sum of contributing bin means. Requires >= 3 contributing bins.
double wrde(const BinnedErrorCurve& curve, const WrdeConfig& config);

// Unweighted near/medium/far means over the contributing-bin thirds.
std::array<double, 3> segment_means(const BinnedErrorCurve& curve,
                                    const WrdeConfig& config);

// --- aggregation and comparison -------------------------------------------

// Pixel-weighted accumulation across images: per-bin error sums and counts
// are merged, classical metrics are weighted by valid pixel count.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(const WrdeConfig& config,
                             const D1Thresholds& d1 = {});

  // pred/gt disparities plus calibration for depth binning.
  void add(const DisparityMap& pred, const DisparityMap& gt,
           const StereoCalibration& calib);

  std::int64_t images() const { return images_; }
  BinnedErrorCurve curve() const;
  MetricReport finalize() const;  // throws DataError when nothing accumulated

 private:
  WrdeConfig config_;
  D1Thresholds d1_thresholds_;
  std::int64_t images_ = 0;
  std::int64_t pixels_ = 0;
  double abs_err_sum_ = 0.0;
  std::int64_t gt1_ = 0, gt2_ = 0, d1_ = 0;
  std::vector<double> bin_err_sum_;
  std::vector<std::int64_t> bin_count_;
};

// Single-pair convenience: full report plus curve.
struct PairEvaluation {
  MetricReport report;
  BinnedErrorCurve curve;
};
PairEvaluation evaluate_pair(const DisparityMap& pred, const DisparityMap& gt,
                             const StereoCalibration& calib,
                             const WrdeConfig& config,
                             const D1Thresholds& d1 = {});

// Lossless pixel-weighted merge of per-image evaluations (bin means carry
// their counts, rates their pixel counts).
PairEvaluation aggregate_evaluations(const std::vector<PairEvaluation>& parts,
                                     const WrdeConfig& config);

struct ModelEvaluation {
  std::string name;
  MetricReport report;
  BinnedErrorCurve curve;
  WrdeConfig config;
};

// Deterministic name-sorted comparison; curves aligned on shared bin centers.
// Throws DataError when configs differ.
struct ComparisonTable {
  std::vector<ModelEvaluation> rows;  // sorted by name
  std::string render_text() const;
  std::string render_csv() const;        // metric table
  std::string render_curves_csv() const; // merged curves keyed by bin center
};
ComparisonTable compare_models(std::vector<ModelEvaluation> models);

// --- interchange -----------------------------------------------------------

// CSV with header `bin_center_m,mean_rel_err,count`; missing bins write nan.
std::string curve_to_csv(const BinnedErrorCurve& curve);
BinnedErrorCurve curve_from_csv(const std::string& text);

std::string report_to_json(const MetricReport& report, const WrdeConfig& config,
                           const std::string& name = "");
ModelEvaluation report_from_json(const std::string& text);

}  // namespace dva
