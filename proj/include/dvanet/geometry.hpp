#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "dvanet/core/grid.hpp"

namespace dva {

// Disparities below this are treated as invalid: the corresponding depth is
// unbounded and would otherwise leak infinities into the metrics.
inline constexpr double kEpsilonDisparity = 1e-6;

struct StereoCalibration {
  double focal_length_px = 0.0;
  double baseline_m = 0.0;
  // (cx, cy); defaults to the geometric image center when absent.
  std::optional<std::pair<double, double>> principal_point;

  double fb() const { return focal_length_px * baseline_m; }
  std::pair<double, double> principal_or_center(int width, int height) const;
  void validate() const;  // throws DataError on non-positive f or b
};

// Pixels dropped or clamped during a conversion, surfaced instead of being
// silently discarded. `negative_disparities` covers the d = x_l - x_r >= 0
// sign convention for rectified pairs.
struct ConversionStats {
  std::int64_t masked_small_disparity = 0;
  std::int64_t negative_disparities = 0;
  std::int64_t clamped = 0;
};

// z = f*b / d per valid pixel. Pixels with d <= kEpsilonDisparity (and
// negative disparities) become invalid in the output mask.
DepthMap disparity_to_depth(const DisparityMap& d, const StereoCalibration& calib,
                            ConversionStats* stats = nullptr);

// d = f*b / z. Mirror of the above; non-positive depths become invalid.
DisparityMap depth_to_disparity(const DepthMap& z, const StereoCalibration& calib,
                                ConversionStats* stats = nullptr);

// Normalized depth labels d_min / d_gt in (0, 1]. Valid pixels with
// d_gt < d_min are clamped to 1.0 and counted in stats->clamped.
NormalizedDepthMap normalize_depth_labels(const DisparityMap& d_gt, double d_min,
                                          ConversionStats* stats = nullptr);

// z / z_max clamped to [0, 1]; pixels above z_max are counted.
NormalizedDepthMap normalize_depth_from_metric(const DepthMap& z, double z_max,
                                               ConversionStats* stats = nullptr);

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Pinhole back-projection of every valid pixel, row-major order:
//   Z = f*b/d,  X = (x - cx) * Z / f,  Y = (y - cy) * Z / f.
std::vector<Point3> disparity_to_pointcloud(const DisparityMap& d,
                                            const StereoCalibration& calib);

}  // namespace dva
