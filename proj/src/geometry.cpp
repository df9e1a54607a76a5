#include "dvanet/geometry.hpp"

#include <cmath>

#include "dvanet/core/errors.hpp"

namespace dva {

std::pair<double, double> StereoCalibration::principal_or_center(int width,
                                                                 int height) const {
  if (principal_point) return *principal_point;
  return {0.5 * (width - 1), 0.5 * (height - 1)};
}

void StereoCalibration::validate() const {
  if (!(focal_length_px > 0.0))
    throw DataError("calibration: focal length must be positive");
  if (!(baseline_m > 0.0))
    throw DataError("calibration: baseline must be positive");
}

static void require_nonempty(const MaskedGrid& g, const char* what) {
  if (g.height <= 0 || g.width <= 0 || g.count_valid() == 0)
    throw DataError(std::string(what) + ": map has no valid pixels");
}

DepthMap disparity_to_depth(const DisparityMap& d, const StereoCalibration& calib,
                            ConversionStats* stats) {
  calib.validate();
  require_nonempty(d, "disparity_to_depth");
  const double fb = calib.fb();
  DepthMap z(d.height, d.width, 0.0, false);
  ConversionStats local;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d.valid[i]) continue;
    const double dv = d.values[i];
    if (dv < 0.0) {
      ++local.negative_disparities;
      continue;
    }
    if (dv <= kEpsilonDisparity) {
      ++local.masked_small_disparity;
      continue;
    }
    z.values[i] = fb / dv;
    z.valid[i] = 1;
  }
  if (stats) *stats = local;
  return z;
}

DisparityMap depth_to_disparity(const DepthMap& z, const StereoCalibration& calib,
                                ConversionStats* stats) {
  calib.validate();
  require_nonempty(z, "depth_to_disparity");
  const double fb = calib.fb();
  DisparityMap d(z.height, z.width, 0.0, false);
  ConversionStats local;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!z.valid[i]) continue;
    const double zv = z.values[i];
    if (!(zv > 0.0)) {
      ++local.masked_small_disparity;
      continue;
    }
    d.values[i] = fb / zv;
    d.valid[i] = 1;
  }
  if (stats) *stats = local;
  return d;
}

NormalizedDepthMap normalize_depth_labels(const DisparityMap& d_gt, double d_min,
                                          ConversionStats* stats) {
  if (!(d_min > 0.0)) throw DataError("normalize_depth_labels: d_min must be positive");
  NormalizedDepthMap out(d_gt.height, d_gt.width, 0.0, false);
  ConversionStats local;
  for (std::size_t i = 0; i < d_gt.size(); ++i) {
    if (!d_gt.valid[i]) continue;
    const double dv = d_gt.values[i];
    if (dv <= kEpsilonDisparity) {
      ++local.masked_small_disparity;
      continue;
    }
    double v = d_min / dv;
    if (v > 1.0) {
      v = 1.0;
      ++local.clamped;
    }
    out.values[i] = v;
    out.valid[i] = 1;
  }
  if (stats) *stats = local;
  return out;
}

NormalizedDepthMap normalize_depth_from_metric(const DepthMap& z, double z_max,
                                               ConversionStats* stats) {
  if (!(z_max > 0.0))
    throw DataError("normalize_depth_from_metric: z_max must be positive");
  NormalizedDepthMap out(z.height, z.width, 0.0, false);
  ConversionStats local;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!z.valid[i]) continue;
    double v = z.values[i] / z_max;
    if (v < 0.0) v = 0.0;
    if (v > 1.0) {
      v = 1.0;
      ++local.clamped;
    }
    out.values[i] = v;
    out.valid[i] = 1;
  }
  if (stats) *stats = local;
  return out;
}

std::vector<Point3> disparity_to_pointcloud(const DisparityMap& d,
                                            const StereoCalibration& calib) {
  calib.validate();
  const auto [cx, cy] = calib.principal_or_center(d.width, d.height);
  const double f = calib.focal_length_px;
  const double fb = calib.fb();
  std::vector<Point3> points;
  points.reserve(std::size_t(d.count_valid()));
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(y, x)) continue;
      const double dv = d.at(y, x);
      if (dv <= kEpsilonDisparity) continue;
      const double Z = fb / dv;
      points.push_back({(x - cx) * Z / f, (y - cy) * Z / f, Z});
    }
  }
  return points;
}

}  // namespace dva
