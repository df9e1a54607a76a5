#include <chrono>
#include <cmath>

#include "doctest.h"
#include "dvanet/core/errors.hpp"
#include "dvanet/net/model.hpp"

using namespace dva;
using nn::Tensor;
using nn::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::uint64_t seed,
                             double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  t.fill_uniform(rng, lo, hi);
  return t;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("discrepancy volume: zero self-difference and shift arithmetic") {
  // identical features -> the d = 0 slice vanishes
  auto f = random_tensor({1, 2, 3, 5}, 3u);
  auto v = build_discrepancy_volume(Var<double>(f), Var<double>(f), 3);
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 3; ++h)
      for (int x = 0; x < 5; ++x)
        CHECK(v.value()[((c * 3 + 0) * 3 + h) * 5 + x] == 0.0);

  // 1 channel, width 3: F_l = [1,2,3], F_r = [4,5,6]
  Tensor<double> fl({1, 1, 1, 3}), fr({1, 1, 1, 3});
  for (int i = 0; i < 3; ++i) {
    fl[i] = i + 1;
    fr[i] = i + 4;
  }
  auto vol = build_discrepancy_volume(Var<double>(fl), Var<double>(fr), 3);
  CHECK(vol.value()[1 * 3 + 2] == doctest::Approx(-2.0));  // d=1, x=2 -> 3-5
  CHECK(vol.value()[2 * 3 + 1] == doctest::Approx(0.0));   // d=2, x=1: zero-fill
  CHECK(vol.value()[2 * 3 + 2] == doctest::Approx(3.0 - 4.0));

  CHECK_THROWS_AS(
      build_discrepancy_volume(Var<double>(fl), Var<double>(fr), 4),
      InvariantError);
}

TEST_CASE("discrepancy volume equals the triple-loop reference exactly") {
  const int N = 2, C = 8, D = 4, H = 6, W = 6;
  auto fl = random_tensor({N, C, H, W}, 5u);
  auto fr = random_tensor({N, C, H, W}, 6u);
  auto vol = build_discrepancy_volume(Var<double>(fl), Var<double>(fr), D);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int x = 0; x < W; ++x) {
            const double want =
                x >= d ? fl[((n * C + c) * H + h) * W + x] -
                             fr[((n * C + c) * H + h) * W + x - d]
                       : 0.0;
            CHECK(vol.value()[((((n * C + c) * D + d) * H + h) * W) + x] == want);
          }
}

TEST_CASE("group reduce compresses 128 channels to 32") {
  auto vol = Var<double>(random_tensor({1, 128, 2, 3, 3}, 7u));
  auto out = group_reduce(vol, 32);
  CHECK(out.value().shape() == std::vector<int>{1, 32, 2, 3, 3});

  // constant channels stay constant
  Tensor<double> c({1, 8, 1, 2, 2});
  c.fill(3.25);
  auto r = group_reduce(Var<double>(c), 2);
  for (std::int64_t i = 0; i < r.value().size(); ++i) CHECK(r.value()[i] == 3.25);
}

TEST_CASE("hierarchy attention gates the volume through a sigmoid") {
  // F_att = 0 -> every weight is exactly 0.5
  Tensor<double> f({1, 2, 2, 2});
  auto vol_t = random_tensor({1, 2, 3, 2, 2}, 8u);
  auto gated = apply_hierarchy_attention(Var<double>(vol_t), Var<double>(f));
  for (std::int64_t i = 0; i < gated.value().size(); ++i)
    CHECK(gated.value()[i] == doctest::Approx(0.5 * vol_t[i]).epsilon(1e-12));

  // sigmoid(ln 3) = 3/4: a single 4.0 entry becomes 3.0
  Tensor<double> f1({1, 1, 1, 1}), v1({1, 1, 1, 1, 1});
  f1[0] = std::log(3.0);
  v1[0] = 4.0;
  auto one = apply_hierarchy_attention(Var<double>(v1), Var<double>(f1));
  CHECK(one.value()[0] == doctest::Approx(3.0).epsilon(1e-12));

  // saturated gate passes the volume through
  f.fill(50.0);
  auto passed = apply_hierarchy_attention(Var<double>(vol_t), Var<double>(f));
  for (std::int64_t i = 0; i < passed.value().size(); ++i)
    CHECK(passed.value()[i] == doctest::Approx(vol_t[i]).epsilon(1e-6));

  // attention weights live strictly inside (0, 1)
  auto w = hierarchy_attention_weights(Var<double>(random_tensor({1, 4, 3, 3}, 9u, -30, 30)));
  for (std::int64_t i = 0; i < w.value().size(); ++i) {
    CHECK(w.value()[i] > 0.0);
    CHECK(w.value()[i] < 1.0);
  }
}

TEST_CASE("hierarchy attention is linear in the volume argument") {
  auto f = random_tensor({1, 3, 2, 4}, 10u);
  auto v = random_tensor({1, 3, 2, 2, 4}, 11u);
  Tensor<double> kv = v;
  for (std::int64_t i = 0; i < kv.size(); ++i) kv[i] *= -2.5;
  auto a = apply_hierarchy_attention(Var<double>(v), Var<double>(f));
  auto b = apply_hierarchy_attention(Var<double>(kv), Var<double>(f));
  for (std::int64_t i = 0; i < a.value().size(); ++i)
    CHECK(b.value()[i] == doctest::Approx(-2.5 * a.value()[i]).epsilon(1e-12));
}

TEST_CASE("aggregation keeps shape, is deterministic, and no gradient is dead") {
  Rng rng(12u);
  VolumeAggregator<double> agg(32, 24, 32, rng);
  agg.set_training(false);
  Tensor<double> vol_t = random_tensor({1, 32, 4, 8, 8}, 13u);
  Var<double> vol(vol_t, true);
  auto out = agg.forward(vol);
  CHECK(out.value().shape() == vol.value().shape());

  auto again = agg.forward(Var<double>(vol_t));
  CHECK(bitwise_equal(out.value(), again.value()));

  // every input element influences the mean output
  auto loss = nn::mean_all(agg.forward(vol));
  loss.backward();
  std::int64_t dead = 0;
  for (std::int64_t i = 0; i < vol.grad().size(); ++i)
    if (vol.grad()[i] == 0.0) ++dead;
  CHECK(dead == 0);

  // spot-check the analytic gradient against finite differences
  Rng pick(14u);
  const double h = 1e-6;
  for (int probe = 0; probe < 12; ++probe) {
    const std::int64_t i = std::int64_t(pick.below(std::uint32_t(vol_t.size())));
    const double keep = vol.value()[i];
    double fp, fm;
    {
      nn::NoGradGuard ng;
      vol.value()[i] = keep + h;
      fp = nn::mean_all(agg.forward(vol)).value()[0];
      vol.value()[i] = keep - h;
      fm = nn::mean_all(agg.forward(vol)).value()[0];
      vol.value()[i] = keep;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(vol.grad()[i]), 1e-10});
    CHECK(std::abs(numeric - vol.grad()[i]) / scale < 1e-3);
  }

  Tensor<double> bad({1, 32, 4, 6, 8});  // height not divisible by 4
  CHECK_THROWS_AS(agg.forward(Var<double>(bad)), DataError);
}

TEST_CASE("disparity attention head normalizes over disparities") {
  Rng rng(15u);
  DisparityAttentionHead<double> head(8, 8, 8, rng);
  head.set_training(false);
  Var<double> c_agg(random_tensor({1, 8, 4, 4, 8}, 16u));
  auto logits = head.forward(c_agg);
  CHECK(logits.value().shape() == std::vector<int>{1, 1, 4, 4, 8});
  auto a_d = nn::softmax(logits, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) {
      double sum = 0.0;
      for (int d = 0; d < 4; ++d) sum += a_d.value()[(d * 4 + y) * 8 + x];
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("softmax of a uniform volume is 1/D") {
  Tensor<double> logits({1, 1, 5, 2, 2});
  logits.fill(0.73);
  auto a_d = nn::softmax(Var<double>(logits), 2);
  for (std::int64_t i = 0; i < a_d.value().size(); ++i)
    CHECK(a_d.value()[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("disparity attention filtering examples") {
  auto vol = random_tensor({1, 3, 4, 2, 2}, 17u);
  Tensor<double> att({1, 1, 4, 2, 2});
  att.fill(0.25);  // uniform gate scales by 1/D
  auto out = apply_disparity_attention(Var<double>(vol), Var<double>(att));
  for (std::int64_t i = 0; i < out.value().size(); ++i)
    CHECK(out.value()[i] == doctest::Approx(vol[i] / 4.0).epsilon(1e-12));

  // one-hot at disparity k zeroes everything else
  att.fill(0.0);
  const int k = 2;
  for (int i = 0; i < 4; ++i) att[k * 4 + i] = 1.0;
  auto hot = apply_disparity_attention(Var<double>(vol), Var<double>(att));
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < 4; ++d)
      for (int i = 0; i < 4; ++i) {
        const double got = hot.value()[(c * 4 + d) * 4 + i];
        if (d == k)
          CHECK(got == doctest::Approx(vol[(c * 4 + d) * 4 + i]));
        else
          CHECK(got == 0.0);
      }

  // broadcast leaves the channel axis untouched: per-channel ratios agree
  Rng rng(18u);
  Tensor<double> gate({1, 1, 4, 2, 2});
  gate.fill_uniform(rng, 0.05, 0.95);
  auto scaled = apply_disparity_attention(Var<double>(vol), Var<double>(gate));
  for (int d = 0; d < 4; ++d)
    for (int i = 0; i < 4; ++i) {
      const double r0 = scaled.value()[(0 * 4 + d) * 4 + i] / vol[(0 * 4 + d) * 4 + i];
      for (int c = 1; c < 3; ++c) {
        const double rc =
            scaled.value()[(c * 4 + d) * 4 + i] / vol[(c * 4 + d) * 4 + i];
        CHECK(rc == doctest::Approx(r0).epsilon(1e-9));
      }
    }
}

TEST_CASE("soft argmin point mass and symmetry") {
  // full-resolution one-hot logits at disparity k
  const int D = 16;
  Tensor<double> logits({1, 1, D, 2, 2});
  const int k = 11;
  for (int i = 0; i < 4; ++i) logits[k * 4 + i] = 50.0;
  auto d = soft_argmin(Var<double>(logits));
  CHECK(d.value().shape() == std::vector<int>{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i)
    CHECK(d.value()[i] == doctest::Approx(double(k)).epsilon(1e-3));

  // uniform probabilities -> (D-1)/2
  logits.fill(1.0);
  auto mid = soft_argmin(Var<double>(logits));
  for (int i = 0; i < 4; ++i)
    CHECK(mid.value()[i] == doctest::Approx((D - 1) / 2.0).epsilon(1e-12));
}

TEST_CASE("regress_disparity from quarter resolution") {
  // quarter-res one-hot at index j lands at ~4j pixels
  for (int j = 0; j < 4; ++j) {
    Tensor<double> logits({1, 1, 4, 2, 2});
    for (int i = 0; i < 4; ++i) logits[j * 4 + i] = 50.0;
    auto d = regress_disparity(Var<double>(logits), 16);
    CHECK(d.value().shape() == std::vector<int>{1, 1, 8, 8});
    for (std::int64_t i = 0; i < d.value().size(); ++i)
      CHECK(std::abs(d.value()[i] - 4.0 * j) <= 0.5);
  }

  // index 3 under d_max = 32 -> about 12 px
  Tensor<double> logits({1, 1, 8, 2, 2});
  for (int i = 0; i < 4; ++i) logits[3 * 4 + i] = 50.0;
  auto d0 = regress_disparity(Var<double>(logits), 32);
  for (std::int64_t i = 0; i < d0.value().size(); ++i)
    CHECK(std::abs(d0.value()[i] - 12.0) <= 0.5);

  CHECK_THROWS_AS(regress_disparity(Var<double>(logits), 30), InvariantError);

  // bounds hold for arbitrary logits
  auto wild = random_tensor({2, 1, 4, 3, 3}, 19u, -8.0, 8.0);
  auto out = regress_disparity(Var<double>(wild), 16);
  for (std::int64_t i = 0; i < out.value().size(); ++i) {
    CHECK(out.value()[i] >= 0.0);
    CHECK(out.value()[i] <= 15.0);
  }
}

TEST_CASE("whole pipeline: shapes, bounds, determinism") {
  ModelConfig cfg = ModelConfig::micro();
  DvaNet<float> net(cfg, 99u);
  net.set_training(false);
  Rng rng(20u);
  Tensor<float> left({1, 3, 16, 32}), right({1, 3, 16, 32});
  left.fill_uniform(rng, 0.f, 1.f);
  right.fill_uniform(rng, 0.f, 1.f);

  nn::NoGradGuard ng;
  auto out = net.forward(Var<float>(left), Var<float>(right));
  CHECK(out.d1.value().shape() == std::vector<int>{1, 1, 16, 32});
  CHECK(out.d0.value().shape() == std::vector<int>{1, 1, 16, 32});
  CHECK(out.norm_depth.value().shape() == std::vector<int>{1, 1, 16, 32});
  CHECK(out.channel_attention.value().shape() == std::vector<int>{1, 8, 4, 8});
  CHECK(out.disparity_attention.value().shape() == std::vector<int>{1, 1, 4, 4, 8});

  for (std::int64_t i = 0; i < out.d1.value().size(); ++i) {
    CHECK(out.d1.value()[i] >= 0.f);
    CHECK(out.d1.value()[i] <= float(cfg.max_disparity - 1));
    CHECK(out.norm_depth.value()[i] >= 0.f);
    CHECK(out.norm_depth.value()[i] <= 1.f);
  }
  for (std::int64_t i = 0; i < out.channel_attention.value().size(); ++i) {
    CHECK(out.channel_attention.value()[i] > 0.f);
    CHECK(out.channel_attention.value()[i] < 1.f);
  }
  // disparity attention sums to one per pixel
  const auto& ad = out.disparity_attention.value();
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) {
      float sum = 0.f;
      for (int d = 0; d < 4; ++d) sum += ad[(d * 4 + y) * 8 + x];
      CHECK(std::abs(sum - 1.f) <= 1e-6f);
    }

  // a freshly built model with the same seed reproduces the output bitwise
  DvaNet<float> net2(cfg, 99u);
  net2.set_training(false);
  auto out2 = net2.forward(Var<float>(left), Var<float>(right));
  CHECK(bitwise_equal(out.d1.value(), out2.d1.value()));
}

TEST_CASE("full-size configuration runs a forward pass end to end") {
  DvaNet<float> net(ModelConfig::full_size(), 5u);
  net.set_training(false);
  Rng rng(6u);
  Tensor<float> left({1, 3, 64, 256}), right({1, 3, 64, 256});
  left.fill_uniform(rng, 0.f, 1.f);
  right.fill_uniform(rng, 0.f, 1.f);
  nn::NoGradGuard ng;
  auto out = net.forward(Var<float>(left), Var<float>(right));
  CHECK(out.d1.value().shape() == std::vector<int>{1, 1, 64, 256});
  CHECK(out.disparity_attention.value().shape() ==
        std::vector<int>{1, 1, 48, 16, 64});
  for (std::int64_t i = 0; i < out.d1.value().size(); ++i) {
    CHECK(out.d1.value()[i] >= 0.f);
    CHECK(out.d1.value()[i] <= 191.f);
  }
}

TEST_CASE("correlation-volume ablation toggle runs the same pipeline") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.volume_kind = VolumeKind::correlation;
  DvaNet<float> net(cfg, 123u);
  net.set_training(false);
  Rng rng(29u);
  Tensor<float> left({1, 3, 16, 32}), right({1, 3, 16, 32});
  left.fill_uniform(rng, 0.f, 1.f);
  right.fill_uniform(rng, 0.f, 1.f);
  nn::NoGradGuard ng;
  auto out = net.forward(Var<float>(left), Var<float>(right));
  CHECK(out.d1.value().shape() == std::vector<int>{1, 1, 16, 32});
  for (std::int64_t i = 0; i < out.d1.value().size(); ++i) {
    CHECK(out.d1.value()[i] >= 0.f);
    CHECK(out.d1.value()[i] <= 15.f);
  }

  // the two volume constructions genuinely differ
  DvaNet<float> discr(ModelConfig::micro(), 123u);
  discr.set_training(false);
  auto out2 = discr.forward(Var<float>(left), Var<float>(right));
  bool any_diff = false;
  for (std::int64_t i = 0; i < out.d1.value().size() && !any_diff; ++i)
    any_diff = out.d1.value()[i] != out2.d1.value()[i];
  CHECK(any_diff);
}

TEST_CASE("end-to-end gradient of mean disparity matches finite differences") {
  const auto t0 = std::chrono::steady_clock::now();

  ModelConfig cfg = ModelConfig::micro();  // 16x32 images, d_max 16, 8 feature ch
  DvaNet<double> net(cfg, 7u);
  net.set_training(false);

  Rng rng(21u);
  Tensor<double> left({1, 3, 16, 32}), right({1, 3, 16, 32});
  left.fill_uniform(rng, 0.0, 1.0);
  right.fill_uniform(rng, 0.0, 1.0);
  Var<double> lv(left, true), rv(right, true);

  auto loss = nn::mean_all(net.forward(lv, rv).d1);
  loss.backward();

  // Step sized against double roundoff: the loss is O(10) while per-pixel
  // gradients are O(1e-7), so 1e-5 steps leave only ~1e-12 in the difference.
  Rng pick(22u);
  const double h = 1e-3;
  double worst = 0.0;
  for (int probe = 0; probe < 24; ++probe) {
    const bool use_left = probe % 2 == 0;
    Var<double>& v = use_left ? lv : rv;
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
  }
  CHECK(worst < 1e-3);

  const auto secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 120.0);
}
