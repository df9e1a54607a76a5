// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Criteria marked with their pinned tolerances; timings are wall-clock.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

#include "dvanet/cli/commands.hpp"
#include "dvanet/metrics.hpp"
#include "dvanet/net/model.hpp"
#include "dvanet/train/trainer.hpp"

using namespace dva;
using nn::Tensor;
using nn::Var;

namespace {

struct Criterion {
  const char* name;
  double time_limit_s;  // 0 = untimed
  std::function<bool(std::string&)> fn;
};

// --- 1. WRDE oracle equivalence --------------------------------------------

double brute_force_wrde(const DisparityMap& pred, const DisparityMap& gt,
                        const StereoCalibration& calib, const WrdeConfig& cfg) {
  const int total = int(std::floor((cfg.z_max - cfg.z_min) / cfg.interval + 1e-9));
  std::vector<double> sum(std::size_t(total), 0.0);
  std::vector<long long> cnt(std::size_t(total), 0);
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.is_valid(y, x) || !pred.is_valid(y, x)) continue;
      const double dgt = gt.at(y, x);
      const double dhat = pred.at(y, x);
      if (dgt <= 1e-6 || dhat <= 1e-6) continue;
      const double z = calib.focal_length_px * calib.baseline_m / dgt;
      if (z < cfg.z_min || z >= cfg.z_max) continue;
      const int b = int(std::floor((z - cfg.z_min) / cfg.interval));
      if (b < 0 || b >= total) continue;
      sum[std::size_t(b)] += std::abs(1.0 - dgt / dhat);
      cnt[std::size_t(b)] += 1;
    }
  std::vector<double> means;
  for (int b = 0; b < total; ++b)
    if (cnt[std::size_t(b)] > 0)
      means.push_back(sum[std::size_t(b)] / double(cnt[std::size_t(b)]));
  const int n = int(means.size());
  double out = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = i < n / 3 ? 1.0 / (2.0 * n)
                               : (i < (2 * n) / 3 ? 1.0 / n : 3.0 / (2.0 * n));
    out += w * means[std::size_t(i)];
  }
  return out;
}

bool wrde_oracle_equivalence(std::string& detail) {
  StereoCalibration calib;
  calib.focal_length_px = 50.0;
  calib.baseline_m = 0.5;  // fb = 25: toy disparities 3..13 land at 1.9..8.3 m
  const WrdeConfig cfg{2.0, 8.0, 0.15, {1.0, 2.0, 3.0}};
  Rng rng(2024u);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    // half the pairs come from the scene generator (ramps sweep the full
    // depth range; constant scenes would fill a single bin), half are raw
    // random maps
    DisparityMap gt, pred;
    if (trial % 2 == 0) {
      auto scene = generate_synthetic_scene(SceneKind::ramp, 96, 48, 16,
                                            1000u + std::uint64_t(trial));
      gt = scene.gt_disparity;
      pred = gt;
      for (std::size_t i = 0; i < pred.size(); ++i)
        pred.values[i] = std::max(0.5, pred.values[i] + rng.normal(0.0, 0.8));
    } else {
      gt = DisparityMap(40, 50);
      pred = DisparityMap(40, 50);
      for (std::size_t i = 0; i < gt.size(); ++i) {
        gt.values[i] = rng.uniform(3.0, 13.0);
        pred.values[i] = std::max(0.5, gt.values[i] + rng.normal(0.0, 1.0));
        if (rng.uniform() < 0.1) gt.valid[i] = 0;  // sparse labels
      }
    }
    const auto eval = evaluate_pair(pred, gt, calib, cfg);
    const double oracle = brute_force_wrde(pred, gt, calib, cfg);
    const double rel =
        std::abs(eval.report.wrde - oracle) / std::max(1.0, std::abs(oracle));
    worst = std::max(worst, rel);
    if (rel > 1e-10) {
      detail = "pair " + std::to_string(trial) + " rel diff " + std::to_string(rel);
      return false;
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "10 pairs, worst rel diff %.2e", worst);
  detail = buf;
  return true;
}

// --- 2. analytic error curve -------------------------------------------------

bool analytic_curve(std::string& detail) {
  const double fb = 100.0;
  StereoCalibration calib;
  calib.focal_length_px = fb;
  calib.baseline_m = 1.0;
  const WrdeConfig cfg{2.0, 8.0, 0.15, {1.0, 2.0, 3.0}};
  const int h = 512, w = 16;
  DisparityMap gt(h, w), pred(h, w);
  for (int y = 0; y < h; ++y) {
    const double z = 1.9 + (8.3 - 1.9) * double(y) / double(h - 1);
    for (int x = 0; x < w; ++x) {
      gt.at(y, x) = fb / z;
      pred.at(y, x) = gt.at(y, x) + 1.0;  // e_d = +1 px
    }
  }
  const auto curve = bin_errors(disparity_to_depth(gt, calib),
                                relative_depth_error(pred, gt), cfg);
  if (curve.total_bins() != 40) {
    detail = "expected 40 bins";
    return false;
  }
  double prev = -1.0, worst = 0.0;
  for (int b = 0; b < 40; ++b) {
    if (curve.counts[b] == 0) {
      detail = "bin " + std::to_string(b) + " empty";
      return false;
    }
    const double z = curve.bin_centers[b];
    const double expected = 1.0 / std::abs(1.0 + fb / z);
    worst = std::max(worst, std::abs(curve.mean_errors[b] - expected));
    if (std::abs(curve.mean_errors[b] - expected) > 1e-3) {
      detail = "bin " + std::to_string(b) + " off analytic form";
      return false;
    }
    if (curve.mean_errors[b] <= prev) {
      detail = "curve not strictly increasing at bin " + std::to_string(b);
      return false;
    }
    prev = curve.mean_errors[b];
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "worst |curve - analytic| %.2e", worst);
  detail = buf;
  return true;
}

// --- 3. weight normalization ---------------------------------------------------

bool weight_normalization(std::string& detail) {
  for (int n = 3; n <= 300; n += 3) {
    double sum = 0.0;
    for (double w : wrde_weights(n)) sum += w;
    if (std::abs(sum - 1.0) > 1e-12) {
      detail = "N=" + std::to_string(n);
      return false;
    }
  }
  // constant curves return the constant
  const WrdeConfig cfg{0.0, 6.0, 1.0, {1.0, 2.0, 3.0}};
  BinnedErrorCurve curve;
  for (int b = 0; b < 6; ++b) {
    curve.bin_centers.push_back(b + 0.5);
    curve.mean_errors.push_back(0.0314);
    curve.counts.push_back(7);
  }
  if (std::abs(wrde(curve, cfg) - 0.0314) > 1e-12) {
    detail = "constant curve not preserved";
    return false;
  }
  detail = "N in {3..300}, sums within 1e-12";
  return true;
}

// --- 4. discrepancy volume vs. brute force -------------------------------------

bool discrepancy_equivalence(std::string& detail) {
  Rng rng(7u);
  const int N = 2, C = 8, D = 4, H = 6, W = 6;
  Tensor<double> fl({N, C, H, W}), fr({N, C, H, W});
  fl.fill_uniform(rng, -1.0, 1.0);
  fr.fill_uniform(rng, -1.0, 1.0);
  const auto vol = build_discrepancy_volume(Var<double>(fl), Var<double>(fr), D);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int x = 0; x < W; ++x) {
            const double want =
                x >= d ? fl[((n * C + c) * H + h) * W + x] -
                             fr[((n * C + c) * H + h) * W + x - d]
                       : 0.0;
            if (vol.value()[((((n * C + c) * D + d) * H + h) * W) + x] != want) {
              detail = "mismatch at d=" + std::to_string(d);
              return false;
            }
          }
  detail = "triple-loop reference match, exact";
  return true;
}

// --- 5. end-to-end gradient checks ----------------------------------------------

bool gradient_checks(std::string& detail) {
  double worst = 0.0;

  {  // depth-volume regression on a [32,2,2] input, step 1e-5
    Rng rng(31u);
    Tensor<double> f({1, 32, 2, 2});
    f.fill_uniform(rng, -2.0, 2.0);
    Var<double> x(f, true);
    Tensor<double> proj({1, 1, 8, 8});
    proj.fill_uniform(rng, -1.0, 1.0);
    auto make_loss = [&] { return nn::weighted_sum(regress_depth(x), proj); };
    make_loss().backward();
    const double h = 1e-5;
    for (std::int64_t i = 0; i < f.size(); ++i) {
      const double keep = x.value()[i];
      double fp, fm;
      {
        nn::NoGradGuard ng;
        x.value()[i] = keep + h;
        fp = make_loss().value()[0];
        x.value()[i] = keep - h;
        fm = make_loss().value()[0];
        x.value()[i] = keep;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(x.grad()[i]), 1e-8});
      worst = std::max(worst, std::abs(numeric - x.grad()[i]) / scale);
    }
    if (worst > 1e-3) {
      detail = "depth regression gradient off";
      return false;
    }
  }

  {  // mean(D_1) wrt input pixels on the micro network
    ModelConfig cfg = ModelConfig::micro();
    DvaNet<double> net(cfg, 7u);
    net.set_training(false);
    Rng rng(33u);
    Tensor<double> left({1, 3, 16, 32}), right({1, 3, 16, 32});
    left.fill_uniform(rng, 0.0, 1.0);
    right.fill_uniform(rng, 0.0, 1.0);
    Var<double> lv(left, true), rv(right, true);
    nn::mean_all(net.forward(lv, rv).d1).backward();
    Rng pick(35u);
    const double h = 1e-3;  // sized against double roundoff in the long chain
    for (int probe = 0; probe < 32; ++probe) {
      Var<double>& v = probe % 2 ? rv : lv;
      const std::int64_t i = std::int64_t(pick.below(std::uint32_t(left.size())));
      const double keep = v.value()[i];
      double fp, fm;
      {
        nn::NoGradGuard ng;
        v.value()[i] = keep + h;
        fp = nn::mean_all(net.forward(lv, rv).d1).value()[0];
        v.value()[i] = keep - h;
        fm = nn::mean_all(net.forward(lv, rv).d1).value()[0];
        v.value()[i] = keep;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = v.grad()[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
      if (worst > 1e-3) {
        detail = "disparity gradient probe " + std::to_string(probe) + " off";
        return false;
      }
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "worst rel err %.2e", worst);
  detail = buf;
  return true;
}

// --- 6. overfit sanity -----------------------------------------------------------

bool overfit(std::string& detail) {
  TrainConfig cfg;  // toy defaults: 4 scenes, 64x128, d_max 16, 300 steps
  cfg.eval_every = 0;
  Trainer<float> trainer(cfg);
  const auto result = trainer.run();
  char buf[96];
  std::snprintf(buf, sizeof(buf), "train EPE %.4f px, depth MAE %.4f",
                result.train_eval.epe, result.train_eval.depth_mae);
  detail = buf;
  return result.train_eval.epe < 0.5 && result.train_eval.depth_mae < 0.05;
}

// --- 7. parameter budget -----------------------------------------------------------

bool parameter_budget(std::string& detail) {
  DvaNet<float> full(ModelConfig::full_size());
  const double count = double(full.parameter_count());
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.0f parameters (target 5.1M +/- 20%%)", count);
  detail = buf;
  return count >= 0.8 * 5.1e6 && count <= 1.2 * 5.1e6;
}

// --- 8. metric fixtures -------------------------------------------------------------

bool metric_fixtures(std::string& detail) {
  Rng rng(41u);
  const int h = 37, w = 53;
  DisparityMap gt(h, w), pred(h, w);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    // quantized so that gt + 1 subtracts back to exactly 1.0
    gt.values[i] = std::round(rng.uniform(4.0, 60.0) * 256.0) / 256.0;
    pred.values[i] = gt.values[i] + 1.0;
  }
  if (epe(pred, gt) != 1.0) {
    detail = "EPE not exactly 1.0";
    return false;
  }
  if (pixel_error_rate(pred, gt, 1.0) != 0.0) {
    detail = ">1px rate not exactly 0 under strict inequality";
    return false;
  }
  if (pixel_error_rate(pred, gt, 2.0) != 0.0) {
    detail = ">2px rate not exactly 0";
    return false;
  }
  if (d1_rate(pred, gt) != 0.0) {
    detail = "D1 rate not 0 for +1 px";
    return false;
  }
  // conjunction rule: 4 px at 4% is an inlier, 4 px at 40% an outlier
  if (d1_rate(DisparityMap(1, 1, 104.0), DisparityMap(1, 1, 100.0)) != 0.0 ||
      d1_rate(DisparityMap(1, 1, 14.0), DisparityMap(1, 1, 10.0)) != 1.0) {
    detail = "D1 conjunction rule broken";
    return false;
  }
  const WrdeConfig rsrd{2.0, 8.0, 0.15, {1.0, 2.0, 3.0}};
  if (rsrd.total_bins() != 40) {
    detail = "RSRD config does not give 40 bins";
    return false;
  }
  detail = "EPE exactly 1.0, rates 0, conjunction rule, 40 bins";
  return true;
}

// --- 9. invariant suite via selftest -------------------------------------------------

bool selftest_green(std::string& detail) {
  std::ostringstream log;
  const int failures = cli::run_selftest(log);
  detail = failures == 0 ? "all selftest checks passed"
                         : std::to_string(failures) + " selftest failures";
  return failures == 0;
}

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"WRDE oracle equivalence (rel <= 1e-10)", 30.0, wrde_oracle_equivalence},
      {"analytic error curve (+1 px ramp, 1e-3, monotone)", 0.0, analytic_curve},
      {"WRDE weight normalization (1e-12)", 0.0, weight_normalization},
      {"discrepancy volume brute-force equivalence (exact)", 0.0,
       discrepancy_equivalence},
      {"end-to-end gradient checks (rel < 1e-3, double)", 120.0, gradient_checks},
      {"overfit sanity (EPE < 0.5 px, depth MAE < 0.05)", 900.0, overfit},
      {"parameter budget (5.1M +/- 20%)", 0.0, parameter_budget},
      {"metric fixture suite", 0.0, metric_fixtures},
      {"softmax/sigmoid invariant suite via selftest", 0.0, selftest_green},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& ex) {
      detail = std::string("exception: ") + ex.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ok && c.time_limit_s > 0.0 && secs > c.time_limit_s) {
      ok = false;
      detail += " [exceeded time limit]";
    }
    std::printf("%s  %-52s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", c.name, secs,
                detail.empty() ? "" : "  ", detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
