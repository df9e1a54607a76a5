#include "dvanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "dvanet/core/errors.hpp"
#include "json.hpp"

namespace dva {

namespace {

constexpr double kBinEps = 1e-9;  // guards floor() against 6/0.15-style rounding

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct JointStats {
  std::int64_t n = 0;
};

template <typename Fn>
JointStats for_each_joint(const DisparityMap& pred, const DisparityMap& gt, Fn&& fn) {
  if (!pred.same_shape(gt))
    throw DataError("metrics: prediction and ground truth shapes differ");
  JointStats s;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    ++s.n;
    fn(pred.values[i], gt.values[i]);
  }
  if (s.n == 0) throw DataError("metrics: joint valid mask is empty");
  return s;
}

}  // namespace

int WrdeConfig::total_bins() const {
  return int(std::floor((z_max - z_min) / interval + kBinEps));
}

void WrdeConfig::validate() const {
  if (!(z_min < z_max)) throw DataError("wrde config: requires z_min < z_max");
  if (!(interval > 0.0)) throw DataError("wrde config: interval must be positive");
  if (!(interval <= (z_max - z_min) / 3.0 + kBinEps))
    throw DataError("wrde config: interval too large for three segments");
  for (double w : segment_weights)
    if (!(w > 0.0)) throw DataError("wrde config: segment weights must be positive");
}

int BinnedErrorCurve::contributing_bins() const {
  int n = 0;
  for (auto c : counts) n += c > 0;
  return n;
}

double epe(const DisparityMap& pred, const DisparityMap& gt) {
  double sum = 0.0;
  auto s = for_each_joint(pred, gt, [&](double p, double g) { sum += std::abs(p - g); });
  return sum / double(s.n);
}

double pixel_error_rate(const DisparityMap& pred, const DisparityMap& gt,
                        double threshold_px) {
  if (!(threshold_px > 0.0)) throw DataError("pixel_error_rate: threshold must be positive");
  std::int64_t bad = 0;
  auto s = for_each_joint(pred, gt, [&](double p, double g) {
    if (std::abs(p - g) > threshold_px) ++bad;
  });
  return double(bad) / double(s.n);
}

double d1_rate(const DisparityMap& pred, const DisparityMap& gt,
               const D1Thresholds& th) {
  std::int64_t bad = 0;
  auto s = for_each_joint(pred, gt, [&](double p, double g) {
    const double e = std::abs(p - g);
    if (e > th.abs_px && e > th.rel * std::abs(g)) ++bad;
  });
  return double(bad) / double(s.n);
}

MaskedGrid relative_depth_error(const DisparityMap& pred, const DisparityMap& gt) {
  if (!pred.same_shape(gt))
    throw DataError("relative_depth_error: shape mismatch");
  MaskedGrid out(gt.height, gt.width, 0.0, false);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    const double dh = pred.values[i];
    if (dh <= kEpsilonDisparity) continue;  // unbounded predicted depth
    out.values[i] = std::abs(1.0 - gt.values[i] / dh);
    out.valid[i] = 1;
  }
  return out;
}

MaskedGrid relative_depth_error_metric(const DepthMap& pred_z, const DepthMap& gt_z) {
  if (!pred_z.same_shape(gt_z))
    throw DataError("relative_depth_error_metric: shape mismatch");
  MaskedGrid out(gt_z.height, gt_z.width, 0.0, false);
  for (std::size_t i = 0; i < gt_z.size(); ++i) {
    if (!pred_z.valid[i] || !gt_z.valid[i]) continue;
    const double zg = gt_z.values[i];
    if (!(zg > 0.0)) continue;
    out.values[i] = std::abs(zg - pred_z.values[i]) / zg;
    out.valid[i] = 1;
  }
  return out;
}

BinnedErrorCurve bin_errors(const DepthMap& gt_depth, const MaskedGrid& rel_err,
                            const WrdeConfig& config) {
  config.validate();
  if (!gt_depth.same_shape(rel_err)) throw DataError("bin_errors: shape mismatch");
  const int n = config.total_bins();
  std::vector<double> sums(n, 0.0);
  std::vector<std::int64_t> counts(n, 0);
  for (std::size_t i = 0; i < gt_depth.size(); ++i) {
    if (!gt_depth.valid[i] || !rel_err.valid[i]) continue;
    const double z = gt_depth.values[i];
    if (z < config.z_min || z >= config.z_max) continue;
    const int b = int(std::floor((z - config.z_min) / config.interval));
    if (b < 0 || b >= n) continue;  // fractional tail past the last full bin
    sums[b] += rel_err.values[i];
    counts[b] += 1;
  }
  BinnedErrorCurve curve;
  curve.bin_centers.resize(n);
  curve.mean_errors.resize(n);
  curve.counts = std::move(counts);
  for (int b = 0; b < n; ++b) {
    curve.bin_centers[b] = config.z_min + (b + 0.5) * config.interval;
    curve.mean_errors[b] = curve.counts[b] > 0
                               ? sums[b] / double(curve.counts[b])
                               : std::numeric_limits<double>::quiet_NaN();
  }
  return curve;
}

std::vector<double> wrde_weights(int n) {
  if (n < 3) throw DataError("wrde: fewer than 3 contributing bins");
  std::vector<double> w(n);
  const int b1 = n / 3;
  const int b2 = (2 * n) / 3;
  for (int i = 0; i < n; ++i) {
    if (i < b1)
      w[i] = 1.0 / (2.0 * n);
    else if (i < b2)
      w[i] = 1.0 / double(n);
    else
      w[i] = 3.0 / (2.0 * n);
  }
  return w;
}

namespace {

// Indices of bins that actually received samples, in depth order.
std::vector<int> contributing_indices(const BinnedErrorCurve& curve) {
  std::vector<int> idx;
  for (int i = 0; i < curve.total_bins(); ++i)
    if (curve.counts[i] > 0) idx.push_back(i);
  return idx;
}

}  // namespace

double wrde(const BinnedErrorCurve& curve, const WrdeConfig& config) {
  config.validate();
  const auto idx = contributing_indices(curve);
  const auto w = wrde_weights(int(idx.size()));
  double sum = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k)
    sum += w[k] * curve.mean_errors[idx[k]];
  return sum;
}

std::array<double, 3> segment_means(const BinnedErrorCurve& curve,
                                    const WrdeConfig& config) {
  config.validate();
  const auto idx = contributing_indices(curve);
  const int n = int(idx.size());
  const int b1 = n / 3;
  const int b2 = (2 * n) / 3;
  if (b1 < 1 || b2 - b1 < 1 || n - b2 < 1)
    throw DataError("segment_means: a segment has no contributing bins");
  std::array<double, 3> out = {0.0, 0.0, 0.0};
  std::array<int, 3> cnt = {0, 0, 0};
  for (int k = 0; k < n; ++k) {
    const int seg = k < b1 ? 0 : (k < b2 ? 1 : 2);
    out[std::size_t(seg)] += curve.mean_errors[idx[std::size_t(k)]];
    cnt[std::size_t(seg)] += 1;
  }
  for (int s = 0; s < 3; ++s) out[std::size_t(s)] /= double(cnt[std::size_t(s)]);
  return out;
}

MetricAccumulator::MetricAccumulator(const WrdeConfig& config,
                                     const D1Thresholds& d1)
    : config_(config), d1_thresholds_(d1) {
  config_.validate();
  bin_err_sum_.assign(std::size_t(config_.total_bins()), 0.0);
  bin_count_.assign(std::size_t(config_.total_bins()), 0);
}

void MetricAccumulator::add(const DisparityMap& pred, const DisparityMap& gt,
                            const StereoCalibration& calib) {
  const double d1_abs = d1_thresholds_.abs_px;
  const double d1_rel = d1_thresholds_.rel;
  auto s = for_each_joint(pred, gt, [&](double p, double g) {
    const double e = std::abs(p - g);
    abs_err_sum_ += e;
    gt1_ += e > 1.0;
    gt2_ += e > 2.0;
    d1_ += (e > d1_abs && e > d1_rel * std::abs(g));
  });
  pixels_ += s.n;
  ++images_;

  // depth-wise part: bin relative errors by ground-truth depth
  const auto rel = relative_depth_error(pred, gt);
  const auto z = disparity_to_depth(gt, calib);
  const auto curve = bin_errors(z, rel, config_);
  for (int b = 0; b < curve.total_bins(); ++b) {
    if (curve.counts[b] == 0) continue;
    bin_err_sum_[b] += curve.mean_errors[b] * double(curve.counts[b]);
    bin_count_[b] += curve.counts[b];
  }
}

BinnedErrorCurve MetricAccumulator::curve() const {
  BinnedErrorCurve c;
  const int n = config_.total_bins();
  c.bin_centers.resize(n);
  c.mean_errors.resize(n);
  c.counts = bin_count_;
  for (int b = 0; b < n; ++b) {
    c.bin_centers[b] = config_.z_min + (b + 0.5) * config_.interval;
    c.mean_errors[b] = bin_count_[b] > 0
                           ? bin_err_sum_[b] / double(bin_count_[b])
                           : std::numeric_limits<double>::quiet_NaN();
  }
  return c;
}

MetricReport MetricAccumulator::finalize() const {
  if (pixels_ == 0) throw DataError("metrics: nothing accumulated");
  MetricReport r;
  r.valid_pixel_count = pixels_;
  r.epe_px = abs_err_sum_ / double(pixels_);
  r.rate_gt_1px = double(gt1_) / double(pixels_);
  r.rate_gt_2px = double(gt2_) / double(pixels_);
  r.d1_3px = double(d1_) / double(pixels_);
  const auto c = curve();
  r.wrde = wrde(c, config_);
  r.segment_means = segment_means(c, config_);
  return r;
}

PairEvaluation evaluate_pair(const DisparityMap& pred, const DisparityMap& gt,
                             const StereoCalibration& calib,
                             const WrdeConfig& config, const D1Thresholds& d1) {
  MetricAccumulator acc(config, d1);
  acc.add(pred, gt, calib);
  return {acc.finalize(), acc.curve()};
}

PairEvaluation aggregate_evaluations(const std::vector<PairEvaluation>& parts,
                                     const WrdeConfig& config) {
  config.validate();
  if (parts.empty()) throw DataError("aggregate: no evaluations");
  const int bins = config.total_bins();
  std::vector<double> bin_sum(std::size_t(bins), 0.0);
  std::vector<std::int64_t> bin_count(std::size_t(bins), 0);
  double abs_err = 0.0;
  double gt1 = 0.0, gt2 = 0.0, d1 = 0.0;
  std::int64_t pixels = 0;
  for (const auto& p : parts) {
    if (p.curve.total_bins() != bins)
      throw DataError("aggregate: curve bin count mismatch");
    const double n = double(p.report.valid_pixel_count);
    abs_err += p.report.epe_px * n;
    gt1 += p.report.rate_gt_1px * n;
    gt2 += p.report.rate_gt_2px * n;
    d1 += p.report.d1_3px * n;
    pixels += p.report.valid_pixel_count;
    for (int b = 0; b < bins; ++b) {
      if (p.curve.counts[b] == 0) continue;
      bin_sum[b] += p.curve.mean_errors[b] * double(p.curve.counts[b]);
      bin_count[b] += p.curve.counts[b];
    }
  }
  PairEvaluation out;
  out.curve.counts = bin_count;
  out.curve.bin_centers.resize(bins);
  out.curve.mean_errors.resize(bins);
  for (int b = 0; b < bins; ++b) {
    out.curve.bin_centers[b] = config.z_min + (b + 0.5) * config.interval;
    out.curve.mean_errors[b] = bin_count[b] > 0
                                   ? bin_sum[b] / double(bin_count[b])
                                   : std::numeric_limits<double>::quiet_NaN();
  }
  out.report.valid_pixel_count = pixels;
  out.report.epe_px = abs_err / double(pixels);
  out.report.rate_gt_1px = gt1 / double(pixels);
  out.report.rate_gt_2px = gt2 / double(pixels);
  out.report.d1_3px = d1 / double(pixels);
  out.report.wrde = wrde(out.curve, config);
  out.report.segment_means = segment_means(out.curve, config);
  return out;
}

ComparisonTable compare_models(std::vector<ModelEvaluation> models) {
  if (models.empty()) throw DataError("compare_models: no models");
  for (std::size_t i = 1; i < models.size(); ++i)
    if (!(models[i].config == models[0].config))
      throw DataError("compare_models: mixed wrde configs");
  std::sort(models.begin(), models.end(),
            [](const ModelEvaluation& a, const ModelEvaluation& b) {
              return a.name < b.name;
            });
  return ComparisonTable{std::move(models)};
}

std::string ComparisonTable::render_text() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %10s %8s %8s %8s %8s %8s %8s %8s\n",
                "model", "EPE(px)", ">1px(%)", ">2px(%)", "D1(%)", "WRDE(%)",
                "near(%)", "med(%)", "far(%)");
  os << line;
  for (const auto& m : rows) {
    const auto& r = m.report;
    std::snprintf(line, sizeof(line),
                  "%-24s %10.4f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f %8.3f\n",
                  m.name.c_str(), r.epe_px, 100.0 * r.rate_gt_1px,
                  100.0 * r.rate_gt_2px, 100.0 * r.d1_3px, 100.0 * r.wrde,
                  100.0 * r.segment_means[0], 100.0 * r.segment_means[1],
                  100.0 * r.segment_means[2]);
    os << line;
  }
  return os.str();
}

std::string ComparisonTable::render_csv() const {
  std::ostringstream os;
  os << "model,epe_px,rate_gt_1px,rate_gt_2px,d1_3px,wrde,near,medium,far,"
        "valid_pixels\n";
  for (const auto& m : rows) {
    const auto& r = m.report;
    os << m.name << ',' << fmt_double(r.epe_px) << ',' << fmt_double(r.rate_gt_1px)
       << ',' << fmt_double(r.rate_gt_2px) << ',' << fmt_double(r.d1_3px) << ','
       << fmt_double(r.wrde) << ',' << fmt_double(r.segment_means[0]) << ','
       << fmt_double(r.segment_means[1]) << ',' << fmt_double(r.segment_means[2])
       << ',' << r.valid_pixel_count << '\n';
  }
  return os.str();
}

std::string ComparisonTable::render_curves_csv() const {
  std::ostringstream os;
  os << "bin_center_m";
  for (const auto& m : rows) os << ',' << m.name;
  os << '\n';
  if (rows.empty()) return os.str();
  const auto& centers = rows[0].curve.bin_centers;
  for (std::size_t b = 0; b < centers.size(); ++b) {
    os << fmt_double(centers[b]);
    for (const auto& m : rows) {
      os << ',';
      if (b < m.curve.mean_errors.size() && m.curve.counts[b] > 0)
        os << fmt_double(m.curve.mean_errors[b]);
      else
        os << "nan";
    }
    os << '\n';
  }
  return os.str();
}

std::string curve_to_csv(const BinnedErrorCurve& curve) {
  std::ostringstream os;
  os << "bin_center_m,mean_rel_err,count\n";
  for (int b = 0; b < curve.total_bins(); ++b) {
    os << fmt_double(curve.bin_centers[b]) << ',';
    if (curve.counts[b] > 0)
      os << fmt_double(curve.mean_errors[b]);
    else
      os << "nan";
    os << ',' << curve.counts[b] << '\n';
  }
  return os.str();
}

BinnedErrorCurve curve_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("bin_center_m", 0) != 0)
    throw DataError("curve csv: missing header");
  BinnedErrorCurve curve;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') ||
        !std::getline(ls, c, ','))
      throw DataError("curve csv: malformed row: " + line);
    curve.bin_centers.push_back(std::stod(a));
    curve.mean_errors.push_back(b == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                           : std::stod(b));
    curve.counts.push_back(std::stoll(c));
  }
  return curve;
}

std::string report_to_json(const MetricReport& report, const WrdeConfig& config,
                           const std::string& name) {
  nlohmann::json j;
  if (!name.empty()) j["name"] = name;
  j["epe_px"] = report.epe_px;
  j["rate_gt_1px"] = report.rate_gt_1px;
  j["rate_gt_2px"] = report.rate_gt_2px;
  j["d1_3px"] = report.d1_3px;
  j["wrde"] = report.wrde;
  j["segment_means"] = {report.segment_means[0], report.segment_means[1],
                        report.segment_means[2]};
  j["valid_pixel_count"] = report.valid_pixel_count;
  j["wrde_config"] = {{"z_min", config.z_min},
                      {"z_max", config.z_max},
                      {"interval", config.interval},
                      {"segment_weights",
                       {config.segment_weights[0], config.segment_weights[1],
                        config.segment_weights[2]}}};
  return j.dump(2) + "\n";
}

ModelEvaluation report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report json: ") + e.what());
  }
  ModelEvaluation m;
  m.name = j.value("name", "");
  m.report.epe_px = j.at("epe_px").get<double>();
  m.report.rate_gt_1px = j.at("rate_gt_1px").get<double>();
  m.report.rate_gt_2px = j.at("rate_gt_2px").get<double>();
  m.report.d1_3px = j.at("d1_3px").get<double>();
  m.report.wrde = j.at("wrde").get<double>();
  const auto& s = j.at("segment_means");
  m.report.segment_means = {s.at(0).get<double>(), s.at(1).get<double>(),
                            s.at(2).get<double>()};
  m.report.valid_pixel_count = j.at("valid_pixel_count").get<std::int64_t>();
  const auto& c = j.at("wrde_config");
  m.config.z_min = c.at("z_min").get<double>();
  m.config.z_max = c.at("z_max").get<double>();
  m.config.interval = c.at("interval").get<double>();
  const auto& w = c.at("segment_weights");
  m.config.segment_weights = {w.at(0).get<double>(), w.at(1).get<double>(),
                              w.at(2).get<double>()};
  return m;
}

}  // namespace dva
