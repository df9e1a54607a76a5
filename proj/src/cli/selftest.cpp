#include <cmath>
#include <functional>

#include "dvanet/cli/commands.hpp"
#include "dvanet/core/random.hpp"
#include "dvanet/net/model.hpp"
#include "dvanet/train/loss.hpp"

namespace dva::cli {

namespace {

using nn::Tensor;
using nn::Var;

struct Check {
  const char* name;
  std::function<bool()> fn;
};

bool geometry_round_trip() {
  StereoCalibration calib;
  calib.focal_length_px = 721.0;
  calib.baseline_m = 0.54;
  Rng rng(1u);
  DisparityMap d(8, 12);
  for (auto& v : d.values) v = rng.uniform(1.0, 80.0);
  auto back = depth_to_disparity(disparity_to_depth(d, calib), calib);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::abs(back.values[i] - d.values[i]) > 1e-9 * d.values[i]) return false;

  // f and b cancel in the relative depth error
  for (int t = 0; t < 20; ++t) {
    const double dgt = rng.uniform(1.0, 100.0);
    const double dhat = rng.uniform(1.0, 100.0);
    DisparityMap g(1, 1, dgt), p(1, 1, dhat);
    const double zg = disparity_to_depth(g, calib).at(0, 0);
    const double zh = disparity_to_depth(p, calib).at(0, 0);
    const double depth_form = std::abs(zg - zh) / zg;
    const double disp_form = std::abs(1.0 - dgt / dhat);
    if (std::abs(depth_form - disp_form) > 1e-12 * std::max(1.0, disp_form))
      return false;
  }
  return true;
}

bool metric_fixtures() {
  DisparityMap gt(16, 16, 20.0), pred(16, 16, 21.0);
  if (std::abs(epe(pred, gt) - 1.0) > 0.0) return false;
  if (pixel_error_rate(pred, gt, 1.0) != 0.0) return false;  // strict inequality
  if (pixel_error_rate(pred, gt, 2.0) != 0.0) return false;
  if (d1_rate(pred, gt) != 0.0) return false;
  const WrdeConfig rsrd{2.0, 8.0, 0.15, {1.0, 2.0, 3.0}};
  return rsrd.total_bins() == 40;
}

bool wrde_weight_normalization() {
  for (int n : {3, 6, 42, 120}) {
    double sum = 0.0;
    for (double w : wrde_weights(n)) sum += w;
    if (std::abs(sum - 1.0) > 1e-12) return false;
  }
  return true;
}

bool wrde_oracle_equivalence() {
  StereoCalibration calib;
  calib.focal_length_px = 120.0;
  calib.baseline_m = 1.0;
  const WrdeConfig cfg{2.0, 8.0, 0.15, {1.0, 2.0, 3.0}};
  Rng rng(77u);
  for (int trial = 0; trial < 3; ++trial) {
    DisparityMap gt(20, 24), pred(20, 24);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt.values[i] = rng.uniform(2.0, 50.0);
      pred.values[i] = std::max(0.5, gt.values[i] + rng.normal(0.0, 1.0));
    }
    const auto eval = evaluate_pair(pred, gt, calib, cfg);

    // independent single pass over pixels
    const int total = cfg.total_bins();
    std::vector<double> sum(std::size_t(total), 0.0);
    std::vector<long long> cnt(std::size_t(total), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const double z = calib.fb() / gt.values[i];
      if (z < cfg.z_min || z >= cfg.z_max) continue;
      const int b = int(std::floor((z - cfg.z_min) / cfg.interval));
      if (b < 0 || b >= total) continue;
      sum[std::size_t(b)] += std::abs(1.0 - gt.values[i] / pred.values[i]);
      cnt[std::size_t(b)] += 1;
    }
    std::vector<double> means;
    for (int b = 0; b < total; ++b)
      if (cnt[std::size_t(b)] > 0) means.push_back(sum[std::size_t(b)] / double(cnt[std::size_t(b)]));
    const int n = int(means.size());
    double oracle = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = i < n / 3 ? 1.0 / (2.0 * n)
                                 : (i < (2 * n) / 3 ? 1.0 / n : 3.0 / (2.0 * n));
      oracle += w * means[std::size_t(i)];
    }
    if (std::abs(eval.report.wrde - oracle) > 1e-10 * std::max(1.0, oracle))
      return false;
  }
  return true;
}

bool discrepancy_brute_force() {
  Rng rng(5u);
  Tensor<double> fl({1, 3, 4, 6}), fr({1, 3, 4, 6});
  fl.fill_uniform(rng, -1.0, 1.0);
  fr.fill_uniform(rng, -1.0, 1.0);
  auto vol = build_discrepancy_volume(Var<double>(fl), Var<double>(fr), 4);
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < 4; ++d)
      for (int h = 0; h < 4; ++h)
        for (int x = 0; x < 6; ++x) {
          const double want = x >= d ? fl[(c * 4 + h) * 6 + x] - fr[(c * 4 + h) * 6 + x - d]
                                     : 0.0;
          if (vol.value()[(((c * 4 + d) * 4) + h) * 6 + x] != want) return false;
        }
  return true;
}

bool network_invariants() {
  ModelConfig cfg = ModelConfig::micro();
  DvaNet<float> net(cfg, 3u);
  net.set_training(false);
  Rng rng(9u);
  Tensor<float> left({1, 3, 16, 32}), right({1, 3, 16, 32});
  left.fill_uniform(rng, 0.f, 1.f);
  right.fill_uniform(rng, 0.f, 1.f);
  nn::NoGradGuard ng;
  auto out = net.forward(Var<float>(left), Var<float>(right));

  for (std::int64_t i = 0; i < out.d1.value().size(); ++i) {
    if (out.d1.value()[i] < 0.f || out.d1.value()[i] > float(cfg.max_disparity - 1))
      return false;
    if (out.d0.value()[i] < 0.f || out.d0.value()[i] > float(cfg.max_disparity - 1))
      return false;
    if (out.norm_depth.value()[i] < 0.f || out.norm_depth.value()[i] > 1.f)
      return false;
  }
  for (std::int64_t i = 0; i < out.channel_attention.value().size(); ++i) {
    const float a = out.channel_attention.value()[i];
    if (!(a > 0.f && a < 1.f)) return false;
  }
  const auto& ad = out.disparity_attention.value();
  const int D = ad.shape()[2], h = ad.shape()[3], w = ad.shape()[4];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float sum = 0.f;
      for (int d = 0; d < D; ++d) sum += ad[(d * h + y) * w + x];
      if (std::abs(sum - 1.f) > 1e-6f) return false;
    }
  return true;
}

bool depth_regression_gradient() {
  Rng rng(11u);
  Tensor<double> f({1, 32, 2, 2});
  f.fill_uniform(rng, -2.0, 2.0);
  Var<double> x(f, true);
  Tensor<double> proj({1, 1, 8, 8});
  proj.fill_uniform(rng, -1.0, 1.0);
  auto make_loss = [&] { return nn::weighted_sum(regress_depth(x), proj); };
  make_loss().backward();
  const double h = 1e-5;
  for (std::int64_t i = 0; i < f.size(); i += 7) {
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
    if (std::abs(numeric - x.grad()[i]) / scale > 1e-4) return false;
  }
  return true;
}

bool end_to_end_gradient() {
  ModelConfig cfg = ModelConfig::micro();
  DvaNet<double> net(cfg, 13u);
  net.set_training(false);
  Rng rng(15u);
  Tensor<double> left({1, 3, 16, 32}), right({1, 3, 16, 32});
  left.fill_uniform(rng, 0.0, 1.0);
  right.fill_uniform(rng, 0.0, 1.0);
  Var<double> lv(left, true), rv(right, true);
  nn::mean_all(net.forward(lv, rv).d1).backward();
  Rng pick(17u);
  const double h = 1e-3;
  for (int probe = 0; probe < 6; ++probe) {
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
    const double scale = std::max({std::abs(numeric), std::abs(v.grad()[i]), 1e-7});
    if (std::abs(numeric - v.grad()[i]) / scale > 1e-3) return false;
  }
  return true;
}

bool loss_normalization_contract() {
  LossNormalizer n;
  const auto norm = n.update({0.5, 1.25, 0.01});
  const double total = 0.5 / norm[0] + 1.25 / norm[1] + 0.01 / norm[2];
  if (std::abs(total - 3.0) > 1e-12) return false;

  // smooth-L1 joins continuously at |x| = 1
  MaskedGrid g(1, 1, 0.0);
  MaskedGrid p1(1, 1, 1.0 - 1e-9), p2(1, 1, 1.0 + 1e-9);
  return std::abs(smooth_l1(p1, g) - smooth_l1(p2, g)) < 1e-8;
}

}  // namespace

int run_selftest(std::ostream& log) {
  const Check checks[] = {
      {"geometry round trip and error-form equivalence", geometry_round_trip},
      {"classical metric fixtures", metric_fixtures},
      {"depth-error weight normalization", wrde_weight_normalization},
      {"depth-error oracle equivalence", wrde_oracle_equivalence},
      {"discrepancy volume brute force", discrepancy_brute_force},
      {"attention and regression invariants", network_invariants},
      {"depth regression gradient", depth_regression_gradient},
      {"end-to-end disparity gradient", end_to_end_gradient},
      {"loss normalization contract", loss_normalization_contract},
  };
  int failures = 0;
  for (const auto& check : checks) {
    bool ok = false;
    std::string err;
    try {
      ok = check.fn();
    } catch (const std::exception& ex) {
      err = ex.what();
    }
    log << (ok ? "[ok]   " : "[FAIL] ") << check.name;
    if (!ok && !err.empty()) log << " (" << err << ")";
    log << "\n";
    failures += ok ? 0 : 1;
  }
  return failures;
}

}  // namespace dva::cli
