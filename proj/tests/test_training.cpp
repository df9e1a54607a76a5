#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dvanet/core/errors.hpp"
#include "dvanet/train/loss.hpp"
#include "dvanet/train/trainer.hpp"

using namespace dva;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("dvanet_train_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

TrainConfig micro_train_config() {
  TrainConfig cfg;
  cfg.model = ModelConfig::micro();
  cfg.width = 64;
  cfg.height = 32;
  cfg.steps = 12;
  cfg.eval_every = 0;
  cfg.num_scenes = 2;
  cfg.batch_size = 2;
  return cfg;
}

}  // namespace

TEST_CASE("smooth_l1 values and continuity at the transition") {
  MaskedGrid gt(2, 2, 1.0);
  MaskedGrid same = gt;
  CHECK(smooth_l1(same, gt) == doctest::Approx(0.0));

  MaskedGrid half(2, 2, 1.5);
  CHECK(smooth_l1(half, gt) == doctest::Approx(0.125));

  MaskedGrid two(2, 2, 3.0);
  CHECK(smooth_l1(two, gt) == doctest::Approx(1.5));

  // continuous value and slope at |x| = 1
  auto f = [](double x) {
    MaskedGrid p(1, 1, x), g(1, 1, 0.0);
    return smooth_l1(p, g);
  };
  const double h = 1e-7;
  CHECK(f(1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK((f(1.0 + h) - f(1.0)) / h == doctest::Approx(1.0).epsilon(1e-5));
  CHECK((f(1.0) - f(1.0 - h)) / h == doctest::Approx(1.0).epsilon(1e-5));

  MaskedGrid masked(2, 2, 1.0, false);
  CHECK_THROWS_AS(smooth_l1(masked, gt), DataError);
}

TEST_CASE("loss normalizer follows the EMA arithmetic") {
  LossNormalizer n;
  n.decay = 0.99;

  // first step: normalizer equals the loss, each term is exactly 1
  const auto n1 = n.update({0.7, 2.0, 0.03});
  CHECK(0.7 / n1[0] + 2.0 / n1[1] + 0.03 / n1[2] == doctest::Approx(3.0).epsilon(1e-12));

  // second step with doubled losses: term = 2L / (0.99 L + 0.01*2L)
  const auto n2 = n.update({1.4, 4.0, 0.06});
  for (int i = 0; i < 3; ++i) {
    const double term = (i == 0 ? 1.4 : i == 1 ? 4.0 : 0.06) / n2[std::size_t(i)];
    CHECK(term == doctest::Approx(2.0 / 1.01).epsilon(1e-12));
  }

  // all-zero losses: eps guard, no division fault, total 0
  LossNormalizer z;
  const auto nz = z.update({0.0, 0.0, 0.0});
  CHECK(0.0 / nz[0] + 0.0 / nz[1] + 0.0 / nz[2] == doctest::Approx(0.0));

  // round trip through json
  auto back = LossNormalizer::from_json(n.to_json());
  CHECK(back.ema[1] == doctest::Approx(n.ema[1]));
  CHECK(back.initialized);
}

TEST_CASE("normalized loss terms scale gradients by exactly 1/normalizer") {
  nn::Var<double> pred(nn::Tensor<double>({1, 4}), true);
  pred.value()[0] = 0.3;
  pred.value()[1] = -0.8;
  pred.value()[2] = 2.0;
  pred.value()[3] = 0.1;
  nn::Tensor<double> target({1, 4}), mask({1, 4});
  mask.fill(1.0);

  auto raw = nn::masked_smooth_l1(pred, target, mask);
  raw.backward();
  nn::Tensor<double> g_raw = pred.grad();

  pred.zero_grad();
  const double normalizer = 0.37;
  auto scaled = nn::scale(nn::masked_smooth_l1(pred, target, mask), 1.0 / normalizer);
  scaled.backward();
  for (std::int64_t i = 0; i < 4; ++i)
    CHECK(pred.grad()[i] == doctest::Approx(g_raw[i] / normalizer).epsilon(1e-12));
}

TEST_CASE("synthetic constant scene satisfies the warp identity") {
  SyntheticSceneOptions opts;
  opts.constant_disparity = 6.0;
  auto scene = generate_synthetic_scene(SceneKind::constant, 96, 24, 16, 5u, opts);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 24; ++y)
      for (int x = 6; x < 96; ++x) {
        REQUIRE(scene.gt_disparity.is_valid(y, x));
        CHECK(scene.right.at(c, y, x - 6) == scene.left.at(c, y, x));
      }
  // pixels without a right correspondence are masked
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 6; ++x) CHECK(!scene.gt_disparity.is_valid(y, x));

  // normalized depth is d_min / d = 1/6
  for (std::size_t i = 0; i < scene.gt_normalized_depth.size(); ++i)
    if (scene.gt_normalized_depth.valid[i])
      CHECK(scene.gt_normalized_depth.values[i] ==
            doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("synthetic scenes are reproducible and span their kinds") {
  auto a = generate_synthetic_scene(SceneKind::planar, 64, 32, 16, 11u);
  auto b = generate_synthetic_scene(SceneKind::planar, 64, 32, 16, 11u);
  CHECK(a.left.data == b.left.data);
  CHECK(a.right.data == b.right.data);
  CHECK(a.gt_disparity.values == b.gt_disparity.values);

  auto c = generate_synthetic_scene(SceneKind::planar, 64, 32, 16, 12u);
  CHECK(a.left.data != c.left.data);

  auto ramp = generate_synthetic_scene(SceneKind::ramp, 64, 32, 16, 13u);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < ramp.gt_disparity.size(); ++i)
    if (ramp.gt_disparity.valid[i]) {
      lo = std::min(lo, ramp.gt_disparity.values[i]);
      hi = std::max(hi, ramp.gt_disparity.values[i]);
    }
  CHECK(hi - lo > 1.0);  // the ramp actually ramps

  SyntheticSceneOptions bad;
  bad.constant_disparity = 40.0;  // above d_max
  CHECK_THROWS_AS(generate_synthetic_scene(SceneKind::constant, 96, 24, 16, 1u, bad),
                  InvariantError);
}

TEST_CASE("generator ground truth agrees with an exhaustive block-matching oracle") {
  SyntheticSceneOptions opts;
  opts.textureless_band = false;
  opts.constant_disparity = 6.0;
  auto scene = generate_synthetic_scene(SceneKind::constant, 96, 28, 16, 21u, opts);

  const int r = 2;  // 5x5 SAD window
  const int d_max = 16;
  std::int64_t checked = 0;
  double err_sum = 0.0;
  for (int y = r; y < 28 - r; ++y) {
    for (int x = d_max + r; x < 96 - r; ++x) {
      // skip low-variance windows: flat shapes are genuinely ambiguous
      double mean = 0.0, var = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) mean += scene.left.at(0, y + dy, x + dx);
      mean /= 25.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double d = scene.left.at(0, y + dy, x + dx) - mean;
          var += d * d;
        }
      if (var < 1e-3) continue;

      int best_d = -1;
      double best = 1e18, second = 1e18;
      for (int d = 0; d < d_max; ++d) {
        double sad = 0.0;
        for (int c = 0; c < 3; ++c)
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
              sad += std::abs(scene.left.at(c, y + dy, x + dx) -
                              scene.right.at(c, y + dy, x + dx - d));
        if (sad < best) {
          second = best;
          best = sad;
          best_d = d;
        } else if (sad < second) {
          second = sad;
        }
      }
      if (second - best < 1e-4) continue;  // ambiguous match
      ++checked;
      err_sum += std::abs(double(best_d) - scene.gt_disparity.at(y, x));
    }
  }
  REQUIRE(checked > 500);
  CHECK(err_sum == doctest::Approx(0.0));  // EPE exactly zero on unambiguous texture
}

TEST_CASE("one-cycle schedule endpoints and shape") {
  OneCycleSchedule s;
  s.max_lr = 1.4e-3;
  s.total_steps = 300;
  CHECK(s.lr_at(0) == doctest::Approx(1.4e-3 / 25.0));
  CHECK(s.lr_at(299) == doctest::Approx(1.4e-3 / 1e4));
  // rises to the peak then anneals linearly
  const int peak = int(0.3 * 299);
  CHECK(s.lr_at(peak) == doctest::Approx(1.4e-3));
  CHECK(s.lr_at(10) > s.lr_at(0));
  CHECK(s.lr_at(200) < s.lr_at(peak));
  CHECK(s.lr_at(250) > s.lr_at(299));
}

TEST_CASE("train config file parsing") {
  const std::string text =
      "# toy run\n"
      "preset = toy\n"
      "steps = 20\n"
      "batch_size = 2\n"
      "max_lr = 0.002\n"
      "d_max = 16\n"
      "seed = 9\n";
  auto cfg = parse_train_config(text);
  CHECK(cfg.steps == 20);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.max_lr == doctest::Approx(0.002));
  CHECK(cfg.model.max_disparity == 16);
  CHECK(cfg.seed == 9);

  CHECK_THROWS_AS(parse_train_config("bogus_key = 1\n"), DataError);
  CHECK_THROWS_AS(parse_train_config("steps 20\n"), DataError);

  auto back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.steps == cfg.steps);
  CHECK(back.model == cfg.model);
}

TEST_CASE("short training run reduces the loss and writes its trace") {
  TempDir dir;
  TrainConfig cfg = micro_train_config();
  cfg.out_dir = (dir.path / "run").string();
  Trainer<float> trainer(cfg);
  auto result = trainer.run();
  REQUIRE(result.trace.size() == 12);
  CHECK(result.trace.front().total > result.trace.back().total);
  CHECK(result.trace.front().loss_d1 > result.trace.back().loss_d1);
  CHECK(result.next_step == 12);

  // one row per step plus header
  std::ifstream trace(dir.path / "run" / "loss_trace.csv");
  REQUIRE(trace.good());
  std::string line;
  int rows = 0;
  std::getline(trace, line);
  CHECK(line == "step,loss_d0,loss_d1,loss_dep,total,lr");
  while (std::getline(trace, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 12);
  CHECK(fs::exists(result.checkpoint_path));
}

TEST_CASE("divergence guard aborts on non-finite loss") {
  TrainConfig cfg = micro_train_config();
  cfg.steps = 2;
  Trainer<float> trainer(cfg);
  auto params = trainer.model().parameters();
  params[0]->value()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(trainer.run(), InvariantError);
}

TEST_CASE("checkpoint restores the exact model behavior") {
  TempDir dir;
  TrainConfig cfg = micro_train_config();
  cfg.steps = 4;
  cfg.out_dir = (dir.path / "a").string();
  Trainer<float> trainer(cfg);
  auto result = trainer.run();

  // fresh trainer, same config, loads the checkpoint: identical predictions
  Trainer<float> loaded(cfg);
  load_checkpoint<float>(result.checkpoint_path, loaded.model());
  loaded.model().set_training(false);
  trainer.model().set_training(false);
  nn::NoGradGuard ng;
  const auto& scene = trainer.scenes()[0];
  nn::Var<float> l(image_to_tensor<float>(scene.left));
  nn::Var<float> r(image_to_tensor<float>(scene.right));
  auto a = trainer.model().forward(l, r).d1;
  auto b = loaded.model().forward(l, r).d1;
  for (std::int64_t i = 0; i < a.value().size(); ++i)
    CHECK(a.value()[i] == b.value()[i]);

  // integrity: flipping one byte must be detected
  std::fstream f(result.checkpoint_path,
                 std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(100);
  char byte;
  f.seekg(100);
  f.read(&byte, 1);
  byte = char(byte ^ 0x40);
  f.seekp(100);
  f.write(&byte, 1);
  f.close();
  Trainer<float> corrupt(cfg);
  CHECK_THROWS_AS(load_checkpoint<float>(result.checkpoint_path, corrupt.model()),
                  DataError);
}

TEST_CASE("resumed training reproduces the uninterrupted trace") {
  TempDir dir;
  TrainConfig full = micro_train_config();
  full.steps = 8;
  Trainer<float> uninterrupted(full);
  auto ref = uninterrupted.run();
  REQUIRE(ref.trace.size() == 8);

  TrainConfig half = full;
  half.stop_after = 4;
  half.out_dir = (dir.path / "b").string();
  Trainer<float> first_half(half);
  auto r1 = first_half.run();
  REQUIRE(r1.trace.size() == 4);
  REQUIRE(!r1.checkpoint_path.empty());

  TrainConfig rest = full;
  rest.out_dir = (dir.path / "b").string();
  Trainer<float> second_half(rest);
  auto r2 = second_half.resume(r1.checkpoint_path);
  REQUIRE(r2.trace.size() == 4);

  for (int i = 0; i < 4; ++i) {
    CHECK(r1.trace[std::size_t(i)].total == ref.trace[std::size_t(i)].total);
    const auto& resumed = r2.trace[std::size_t(i)];
    const auto& reference = ref.trace[std::size_t(i + 4)];
    CHECK(resumed.step == reference.step);
    CHECK(resumed.loss_d0 == reference.loss_d0);
    CHECK(resumed.loss_d1 == reference.loss_d1);
    CHECK(resumed.loss_dep == reference.loss_dep);
    CHECK(resumed.total == reference.total);
    CHECK(resumed.lr == reference.lr);
  }
}
