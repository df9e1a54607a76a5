#include <cmath>
#include <functional>

#include "doctest.h"
#include "dvanet/core/errors.hpp"
#include "dvanet/nn/functional.hpp"
#include "dvanet/nn/layers.hpp"
#include "dvanet/nn/optim.hpp"

using namespace dva;
using nn::Tensor;
using nn::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  t.fill_uniform(rng, lo, hi);
  return t;
}

// Central finite differences of a rebuilt scalar graph against the analytic
// gradient accumulated in `leaf`.
void check_gradient(Var<double>& leaf, const std::function<Var<double>()>& make_loss,
                    double h = 1e-5, double tol = 1e-6) {
  leaf.zero_grad();
  auto loss = make_loss();
  loss.backward();
  Tensor<double> analytic = leaf.grad();  // copy

  auto& xv = leaf.value();
  for (std::int64_t i = 0; i < xv.size(); ++i) {
    const double keep = xv[i];
    double fp, fm;
    {
      nn::NoGradGuard ng;
      xv[i] = keep + h;
      fp = make_loss().value()[0];
      xv[i] = keep - h;
      fm = make_loss().value()[0];
      xv[i] = keep;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
    CHECK(std::abs(numeric - analytic[i]) <= tol * scale);
  }
}

Tensor<double> projection(const std::vector<int>& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(shape);
  w.fill_uniform(rng, -1.0, 1.0);
  return w;
}

}  // namespace

TEST_CASE("autograd accumulates through shared nodes") {
  Var<double> x(Tensor<double>({2}), true);
  x.value()[0] = 3.0;
  x.value()[1] = -1.0;
  auto y = nn::add(x, x);  // y = 2x
  auto loss = nn::mean_all(y);
  loss.backward();
  CHECK(loss.value()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("no-grad mode records nothing") {
  Var<double> x(Tensor<double>({2}), true);
  nn::NoGradGuard ng;
  auto y = nn::scale(x, 2.0);
  CHECK(!y.requires_grad());
}

TEST_CASE("elementwise op gradients") {
  Rng rng(1u);
  Var<double> x(random_tensor({2, 3, 4}, rng), true);
  const auto w = projection({2, 3, 4}, 17u);

  check_gradient(x, [&] { return nn::weighted_sum(nn::silu(x), w); });
  check_gradient(x, [&] { return nn::weighted_sum(nn::sigmoid(x), w); });
  check_gradient(x, [&] { return nn::weighted_sum(nn::scale(x, -1.7), w); });
  check_gradient(x, [&] { return nn::weighted_sum(nn::add(x, x), w); });
  check_gradient(x, [&] { return nn::mean_all(x); });
}

TEST_CASE("softmax normalizes and backpropagates") {
  Rng rng(2u);
  Var<double> x(random_tensor({2, 5, 3}, rng, -3.0, 3.0), true);
  auto y = nn::softmax(x, 1);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (int l = 0; l < 5; ++l) sum += y.value()[(n * 5 + l) * 3 + i];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  const auto w = projection({2, 5, 3}, 5u);
  check_gradient(x, [&] { return nn::weighted_sum(nn::softmax(x, 1), w); });
}

TEST_CASE("index expectation matches closed form and gradient") {
  Rng rng(3u);
  Var<double> x(random_tensor({1, 4, 2}, rng), true);
  std::vector<double> weights = {0.0, 1.0, 2.0, 3.0};
  auto p = nn::softmax(x, 1);
  auto e = nn::index_expectation(p, 1, weights);
  CHECK(e.value().shape() == std::vector<int>{1, 1, 2});
  const auto w = projection({1, 1, 2}, 7u);
  check_gradient(x, [&] {
    return nn::weighted_sum(
        nn::index_expectation(nn::softmax(x, 1), 1, weights), w);
  });
}

TEST_CASE("conv2d forward against direct evaluation") {
  // 1x1 input channel, 2x2 image, k2 stride1 pad0
  Var<double> x(Tensor<double>({1, 1, 2, 2}), true);
  for (int i = 0; i < 4; ++i) x.value()[i] = i + 1;  // [[1,2],[3,4]]
  Var<double> w(Tensor<double>({1, 1, 2, 2}), true);
  for (int i = 0; i < 4; ++i) w.value()[i] = 1.0;
  Var<double> b(Tensor<double>({1}), true);
  b.value()[0] = 0.5;
  auto y = nn::conv2d(x, w, b, 1, 0);
  CHECK(y.value().shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y.value()[0] == doctest::Approx(10.5));
}

TEST_CASE("conv2d gradients: stride, padding, groups, bias") {
  Rng rng(4u);
  struct Case {
    std::vector<int> xs, ws;
    int stride, pad, groups;
  };
  for (const Case& c : {Case{{2, 3, 5, 6}, {4, 3, 3, 3}, 1, 1, 1},
                        Case{{1, 2, 6, 7}, {3, 2, 2, 2}, 2, 0, 1},
                        Case{{1, 4, 5, 5}, {4, 1, 3, 3}, 1, 1, 4},   // depthwise
                        Case{{2, 4, 6, 6}, {6, 2, 3, 3}, 2, 1, 2}}) {
    Var<double> x(random_tensor(c.xs, rng), true);
    Var<double> w(random_tensor(c.ws, rng, -0.5, 0.5), true);
    Var<double> b(random_tensor({c.ws[0]}, rng), true);
    auto out_shape = nn::conv2d(x, w, b, c.stride, c.pad, c.groups).value().shape();
    const auto proj = projection(out_shape, 31u);
    auto loss = [&] {
      return nn::weighted_sum(nn::conv2d(x, w, b, c.stride, c.pad, c.groups), proj);
    };
    check_gradient(x, loss);
    check_gradient(w, loss);
    check_gradient(b, loss);
  }
}

TEST_CASE("conv3d gradients") {
  Rng rng(5u);
  for (int stride : {1, 2}) {
    Var<double> x(random_tensor({1, 2, 4, 4, 5}, rng), true);
    Var<double> w(random_tensor({3, 2, 3, 3, 3}, rng, -0.4, 0.4), true);
    Var<double> b(random_tensor({3}, rng), true);
    auto out_shape = nn::conv3d(x, w, b, stride, 1).value().shape();
    const auto proj = projection(out_shape, 33u);
    auto loss = [&] { return nn::weighted_sum(nn::conv3d(x, w, b, stride, 1), proj); };
    check_gradient(x, loss);
    check_gradient(w, loss);
    check_gradient(b, loss);
  }
}

TEST_CASE("batch norm: training statistics and gradients") {
  Rng rng(6u);
  Var<double> x(random_tensor({3, 4, 2, 3}, rng, -2.0, 5.0), true);
  Var<double> gamma(random_tensor({4}, rng, 0.5, 1.5), true);
  Var<double> beta(random_tensor({4}, rng), true);
  Tensor<double> rm({4}), rv({4});
  rv.fill(1.0);

  auto y = nn::batch_norm(x, gamma, beta, &rm, &rv, true);
  // per-channel mean ~ beta, unit variance times gamma
  for (int c = 0; c < 4; ++c) {
    double sum = 0.0;
    int count = 0;
    for (int n = 0; n < 3; ++n)
      for (int i = 0; i < 6; ++i) {
        sum += y.value()[(n * 4 + c) * 6 + i];
        ++count;
      }
    CHECK(sum / count == doctest::Approx(beta.value()[c]).epsilon(1e-9));
  }

  const auto proj = projection({3, 4, 2, 3}, 41u);
  auto loss = [&] {
    return nn::weighted_sum(nn::batch_norm(x, gamma, beta, &rm, &rv, true), proj);
  };
  check_gradient(x, loss, 1e-5, 1e-5);
  check_gradient(gamma, loss, 1e-5, 1e-5);
  check_gradient(beta, loss, 1e-5, 1e-5);

  // eval mode: fixed affine map of running stats
  auto loss_eval = [&] {
    return nn::weighted_sum(nn::batch_norm(x, gamma, beta, &rm, &rv, false), proj);
  };
  check_gradient(x, loss_eval);
  check_gradient(gamma, loss_eval);
  check_gradient(beta, loss_eval);
}

TEST_CASE("upsampling is exact at integer source positions") {
  Rng rng(7u);
  Var<double> x(random_tensor({1, 2, 3, 4}, rng), true);
  auto y = nn::upsample_bilinear2d(x, 4);
  CHECK(y.value().shape() == std::vector<int>{1, 2, 12, 16});
  for (int c = 0; c < 2; ++c)
    for (int iy = 0; iy < 3; ++iy)
      for (int ix = 0; ix < 4; ++ix)
        CHECK(y.value()[(c * 12 + iy * 4) * 16 + ix * 4] ==
              doctest::Approx(x.value()[(c * 3 + iy) * 4 + ix]));

  const auto proj = projection({1, 2, 12, 16}, 43u);
  check_gradient(x, [&] { return nn::weighted_sum(nn::upsample_bilinear2d(x, 4), proj); });

  Var<double> v(random_tensor({1, 1, 2, 3, 4}, rng), true);
  const auto proj3 = projection({1, 1, 4, 6, 8}, 44u);
  check_gradient(v, [&] { return nn::weighted_sum(nn::upsample_trilinear3d(v, 2), proj3); });
}

TEST_CASE("pooling and broadcast product gradients") {
  Rng rng(8u);
  Var<double> x(random_tensor({2, 3, 4, 5}, rng), true);
  const auto proj = projection({2, 3, 1, 1}, 45u);
  check_gradient(x, [&] { return nn::weighted_sum(nn::global_avg_pool2d(x), proj); });

  Var<double> gate(random_tensor({2, 3, 1, 1}, rng), true);
  const auto proj2 = projection({2, 3, 4, 5}, 46u);
  auto loss = [&] { return nn::weighted_sum(nn::mul_bcast_hw(gate, x), proj2); };
  check_gradient(gate, loss);
  check_gradient(x, loss);
}

TEST_CASE("volume gate gradients") {
  Rng rng(9u);
  Var<double> att(random_tensor({2, 3, 4, 5}, rng), true);
  Var<double> vol(random_tensor({2, 3, 2, 4, 5}, rng), true);
  const auto proj = projection({2, 3, 2, 4, 5}, 47u);
  auto loss = [&] { return nn::weighted_sum(nn::mul_channel_gate(att, vol), proj); };
  check_gradient(att, loss);
  check_gradient(vol, loss);

  Var<double> datt(random_tensor({2, 1, 2, 4, 5}, rng), true);
  auto loss2 = [&] { return nn::weighted_sum(nn::mul_disp_gate(datt, vol), proj); };
  check_gradient(datt, loss2);
  check_gradient(vol, loss2);
}

TEST_CASE("discrepancy volume equals brute-force loops and backpropagates") {
  Rng rng(10u);
  const int N = 2, C = 3, H = 4, W = 6, D = 4;
  Var<double> fl(random_tensor({N, C, H, W}, rng), true);
  Var<double> fr(random_tensor({N, C, H, W}, rng), true);
  auto vol = nn::discrepancy_volume(fl, fr, D);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int x = 0; x < W; ++x) {
            const double got =
                vol.value()[((((n * C + c) * D + d) * H + h) * W) + x];
            const double want =
                x >= d ? fl.value()[((n * C + c) * H + h) * W + x] -
                             fr.value()[((n * C + c) * H + h) * W + x - d]
                       : 0.0;
            CHECK(got == want);  // exact
          }
  const auto proj = projection({N, C, D, H, W}, 48u);
  auto loss = [&] { return nn::weighted_sum(nn::discrepancy_volume(fl, fr, D), proj); };
  check_gradient(fl, loss);
  check_gradient(fr, loss);
}

TEST_CASE("correlation volume matches brute force and backpropagates") {
  Rng rng(11u);
  const int N = 1, C = 4, H = 3, W = 5, D = 3, G = 2;
  Var<double> fl(random_tensor({N, C, H, W}, rng), true);
  Var<double> fr(random_tensor({N, C, H, W}, rng), true);
  auto vol = nn::correlation_volume(fl, fr, D, G);
  const int cpg = C / G;
  for (int g = 0; g < G; ++g)
    for (int d = 0; d < D; ++d)
      for (int h = 0; h < H; ++h)
        for (int x = 0; x < W; ++x) {
          double want = 0.0;
          if (x >= d) {
            for (int cc = 0; cc < cpg; ++cc) {
              const int c = g * cpg + cc;
              want += fl.value()[(c * H + h) * W + x] *
                      fr.value()[(c * H + h) * W + x - d] / cpg;
            }
          }
          CHECK(vol.value()[(((g * D) + d) * H + h) * W + x] ==
                doctest::Approx(want).epsilon(1e-12));
        }
  const auto proj = projection({N, G, D, H, W}, 49u);
  auto loss = [&] { return nn::weighted_sum(nn::correlation_volume(fl, fr, D, G), proj); };
  check_gradient(fl, loss);
  check_gradient(fr, loss);
}

TEST_CASE("group average") {
  Var<double> vol(Tensor<double>({1, 4, 1, 1, 1}), true);
  for (int i = 0; i < 4; ++i) vol.value()[i] = i + 1;  // [1,2,3,4]
  auto y = nn::group_average(vol, 1);
  CHECK(y.value()[0] == doctest::Approx(2.5));
  CHECK_THROWS_AS(nn::group_average(vol, 3), InvariantError);

  Rng rng(12u);
  Var<double> v2(random_tensor({2, 8, 2, 3, 3}, rng), true);
  const auto proj = projection({2, 2, 2, 3, 3}, 50u);
  check_gradient(v2, [&] { return nn::weighted_sum(nn::group_average(v2, 2), proj); });
}

TEST_CASE("batch concat/slice gradients") {
  Rng rng(13u);
  Var<double> a(random_tensor({2, 3, 2, 2}, rng), true);
  Var<double> b(random_tensor({1, 3, 2, 2}, rng), true);
  const auto proj = projection({3, 3, 2, 2}, 51u);
  auto loss = [&] { return nn::weighted_sum(nn::concat_batch(a, b), proj); };
  check_gradient(a, loss);
  check_gradient(b, loss);

  const auto proj2 = projection({1, 3, 2, 2}, 52u);
  check_gradient(a, [&] { return nn::weighted_sum(nn::slice_batch(a, 1, 1), proj2); });
}

TEST_CASE("masked smooth l1") {
  Var<double> pred(Tensor<double>({1, 4}), true);
  Tensor<double> target({1, 4}), mask({1, 4});
  mask.fill(1.0);
  pred.value()[0] = 0.5;   // quadratic zone: 0.125
  pred.value()[1] = 2.0;   // linear zone: 1.5
  pred.value()[2] = -2.0;  // linear zone: 1.5
  pred.value()[3] = 99.0;  // masked out
  mask[3] = 0.0;
  auto loss = nn::masked_smooth_l1(pred, target, mask);
  CHECK(loss.value()[0] == doctest::Approx((0.125 + 1.5 + 1.5) / 3.0));

  loss.backward();
  CHECK(pred.grad()[0] == doctest::Approx(0.5 / 3.0));
  CHECK(pred.grad()[1] == doctest::Approx(1.0 / 3.0));
  CHECK(pred.grad()[2] == doctest::Approx(-1.0 / 3.0));
  CHECK(pred.grad()[3] == doctest::Approx(0.0));  // invalid pixels: zero gradient

  Tensor<double> empty_mask({1, 4});
  CHECK_THROWS_AS(nn::masked_smooth_l1(pred, target, empty_mask), DataError);

  Rng rng(14u);
  Var<double> p2(random_tensor({2, 3, 3}, rng, -2.5, 2.5), true);
  Tensor<double> t2 = random_tensor({2, 3, 3}, rng);
  Tensor<double> m2({2, 3, 3});
  for (std::int64_t i = 0; i < m2.size(); ++i) m2[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
  check_gradient(p2, [&] { return nn::masked_smooth_l1(p2, t2, m2); });
}

TEST_CASE("module parameter registry and layered gradient flow") {
  Rng rng(15u);
  nn::ConvBn2d<double> block(3, 8, 3, 2, rng);
  auto names = block.named_parameters();
  REQUIRE(names.size() == 3);  // conv w, bn gamma/beta
  CHECK(names[0].first == "conv.w");
  CHECK(block.parameter_count() == 3 * 8 * 9 + 8 + 8);

  nn::MBConv<double> mb(8, 8, 1, rng);
  CHECK(mb.parameter_count() > 0);
  Var<double> x(random_tensor({2, 8, 8, 8}, rng), false);
  auto y = mb.forward(x);
  CHECK(y.value().shape() == std::vector<int>{2, 8, 8, 8});
  auto loss = nn::mean_all(y);
  loss.backward();
  for (auto* p : mb.parameters()) {
    double norm = 0.0;
    if (p->node()->grad.defined())
      for (std::int64_t i = 0; i < p->grad().size(); ++i)
        norm += std::abs(p->grad()[i]);
    CHECK(norm > 0.0);  // every parameter receives gradient
  }
}

TEST_CASE("hourglass keeps shape and is differentiable") {
  Rng rng(16u);
  nn::Hourglass3d<double> hg(4, 6, 8, rng);
  Var<double> x(random_tensor({1, 4, 4, 4, 8}, rng), true);
  auto y = hg.forward(x);
  CHECK(y.value().shape() == x.value().shape());

  hg.set_training(false);
  const auto proj = projection({1, 4, 4, 4, 8}, 53u);
  check_gradient(x, [&] { return nn::weighted_sum(hg.forward(x), proj); }, 1e-5, 1e-4);
}

TEST_CASE("adamw takes a descent step with decoupled decay") {
  Var<double> p(Tensor<double>({2}), true);
  p.value()[0] = 1.0;
  p.value()[1] = -2.0;
  nn::AdamW<double>::Config cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  nn::AdamW<double> opt({&p}, cfg);
  auto loss = nn::weighted_sum(nn::scale(p, 1.0), [] {
    Tensor<double> w({2});
    w[0] = 1.0;
    w[1] = -1.0;
    return w;
  }());
  opt.zero_grad();
  loss.backward();
  opt.step();
  // first Adam step moves each weight by ~lr against the gradient sign
  CHECK(p.value()[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(p.value()[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-6));
}
