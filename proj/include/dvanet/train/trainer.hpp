#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "dvanet/metrics.hpp"
#include "dvanet/net/bridge.hpp"
#include "dvanet/net/checkpoint.hpp"
#include "dvanet/net/model.hpp"
#include "dvanet/train/config.hpp"
#include "dvanet/train/loss.hpp"
#include "dvanet/train/synthetic.hpp"

namespace dva {

struct StepRecord {
  int step = 0;
  double loss_d0 = 0.0;
  double loss_d1 = 0.0;
  double loss_dep = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EvalSnapshot {
  double epe = 0.0;
  double rate_gt_1px = 0.0;
  double depth_mae = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> trace;       // rows for the steps this call executed
  EvalSnapshot train_eval;             // over the training scenes, eval mode
  EvalSnapshot held_out_eval;          // two extra scenes never trained on
  std::string checkpoint_path;
  int next_step = 0;
};

// Deterministic desk-scale training driver: fixed synthetic scenes,
// round-robin batching, AdamW under a one-cycle schedule, adaptive loss
// normalization, checkpoint with full optimizer and normalizer state.
template <typename T>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    model_ = std::make_unique<DvaNet<T>>(cfg_.model, cfg_.seed);
    typename nn::AdamW<T>::Config oc;
    oc.lr = cfg_.max_lr;
    oc.weight_decay = cfg_.weight_decay;
    optimizer_ = std::make_unique<nn::AdamW<T>>(model_->parameters(), oc);
    normalizer_.decay = cfg_.ema_decay;
    make_scenes();
  }

  DvaNet<T>& model() { return *model_; }
  const std::vector<SyntheticScene>& scenes() const { return scenes_; }

  TrainResult run() { return run_from(0); }

  TrainResult resume(const std::string& checkpoint_path) {
    auto state = load_checkpoint<T>(checkpoint_path, *model_, optimizer_.get());
    const auto stored = TrainConfig::from_json(state.at("train_config"));
    if (!(stored.model == cfg_.model))
      throw DataError("resume: checkpoint was trained with a different model config");
    normalizer_ = LossNormalizer::from_json(state.at("normalizer"));
    return run_from(state.at("next_step").template get<int>());
  }

 private:
  void make_scenes() {
    const SceneKind kinds[3] = {SceneKind::constant, SceneKind::ramp,
                                SceneKind::planar};
    SyntheticSceneOptions opts;
    opts.d_min = cfg_.d_min;
    opts.textureless_band = cfg_.textureless_band;
    for (int i = 0; i < cfg_.num_scenes; ++i)
      scenes_.push_back(generate_synthetic_scene(kinds[i % 3], cfg_.width,
                                                 cfg_.height, cfg_.model.max_disparity,
                                                 cfg_.seed + std::uint64_t(i), opts));
    for (int i = 0; i < 2; ++i)
      held_out_.push_back(generate_synthetic_scene(
          kinds[i % 3], cfg_.width, cfg_.height, cfg_.model.max_disparity,
          cfg_.seed + 1000 + std::uint64_t(i), opts));
  }

  struct Batch {
    nn::Tensor<T> left, right;
    MaskedTarget<T> disp;
    MaskedTarget<T> depth;
  };

  Batch make_batch(const std::vector<int>& idx) const {
    std::vector<const RgbImage*> lefts, rights;
    std::vector<const DisparityMap*> gts;
    std::vector<const NormalizedDepthMap*> depths;
    for (int i : idx) {
      lefts.push_back(&scenes_[std::size_t(i)].left);
      rights.push_back(&scenes_[std::size_t(i)].right);
      gts.push_back(&scenes_[std::size_t(i)].gt_disparity);
      depths.push_back(&scenes_[std::size_t(i)].gt_normalized_depth);
    }
    Batch b;
    b.left = image_batch_to_tensor<T>(lefts);
    b.right = image_batch_to_tensor<T>(rights);
    b.disp = disparity_target<T>(gts, double(cfg_.model.max_disparity));
    b.depth = normalized_depth_target<T>(depths);
    return b;
  }

  TrainResult run_from(int start_step) {
    const auto schedule = cfg_.schedule();
    const int stop = cfg_.stop_after > 0 ? cfg_.stop_after : cfg_.steps;

    TrainResult result;
    std::ofstream trace_file;
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      const auto trace_path = std::filesystem::path(cfg_.out_dir) / "loss_trace.csv";
      const bool fresh = start_step == 0;
      trace_file.open(trace_path, fresh ? std::ios::trunc : std::ios::app);
      if (fresh) trace_file << "step,loss_d0,loss_d1,loss_dep,total,lr\n";
    }

    for (int step = start_step; step < stop; ++step) {
      model_->set_training(true);
      const auto batch = batch_for_step(step);

      nn::Var<T> left(batch.left), right(batch.right);
      auto out = model_->forward(left, right);
      auto l_d0 = nn::masked_smooth_l1(out.d0, batch.disp.values, batch.disp.mask);
      auto l_d1 = nn::masked_smooth_l1(out.d1, batch.disp.values, batch.disp.mask);
      auto l_dep =
          nn::masked_smooth_l1(out.norm_depth, batch.depth.values, batch.depth.mask);

      const std::array<double, 3> raw = {double(l_d0.value()[0]),
                                         double(l_d1.value()[0]),
                                         double(l_dep.value()[0])};
      const auto norm = normalizer_.update(raw);
      auto total = nn::add(nn::add(nn::scale(l_d0, 1.0 / norm[0]),
                                   nn::scale(l_d1, 1.0 / norm[1])),
                           nn::scale(l_dep, 1.0 / norm[2]));

      const double total_v = double(total.value()[0]);
      if (!std::isfinite(total_v))
        throw InvariantError("training diverged: non-finite total loss at step " +
                             std::to_string(step));

      const double lr = schedule.lr_at(step);
      optimizer_->set_lr(lr);
      optimizer_->zero_grad();
      total.backward();
      optimizer_->step();

      StepRecord rec{step, raw[0], raw[1], raw[2], total_v, lr};
      result.trace.push_back(rec);
      if (trace_file.is_open()) {
        char line[192];
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", rec.step,
                      rec.loss_d0, rec.loss_d1, rec.loss_dep, rec.total, rec.lr);
        trace_file << line;
      }
      if (cfg_.eval_every > 0 && (step + 1) % cfg_.eval_every == 0)
        result.held_out_eval = evaluate(held_out_);  // periodic held-out check
    }

    result.next_step = stop;
    result.train_eval = evaluate(scenes_);
    result.held_out_eval = evaluate(held_out_);

    if (!cfg_.out_dir.empty()) {
      const auto ckpt =
          (std::filesystem::path(cfg_.out_dir) / "checkpoint.dvnc").string();
      save(ckpt, stop);
      result.checkpoint_path = ckpt;
    }
    return result;
  }

  std::vector<int> batch_indices(int step) const {
    std::vector<int> idx;
    for (int k = 0; k < cfg_.batch_size; ++k)
      idx.push_back(int((std::int64_t(step) * cfg_.batch_size + k) %
                        std::int64_t(scenes_.size())));
    return idx;
  }

  const Batch& batch_for_step(int step) {
    // with full-batch training the tensors never change
    if (cfg_.batch_size >= int(scenes_.size())) {
      if (!full_batch_) {
        std::vector<int> all;
        for (int i = 0; i < int(scenes_.size()); ++i) all.push_back(i);
        full_batch_ = std::make_unique<Batch>(make_batch(all));
      }
      return *full_batch_;
    }
    step_batch_ = std::make_unique<Batch>(make_batch(batch_indices(step)));
    return *step_batch_;
  }

  EvalSnapshot evaluate(const std::vector<SyntheticScene>& scenes) {
    model_->set_training(false);
    nn::NoGradGuard ng;
    double abs_err = 0.0, depth_err = 0.0;
    std::int64_t n_disp = 0, n_depth = 0, n_gt1 = 0;
    for (const auto& scene : scenes) {
      nn::Var<T> left(image_to_tensor<T>(scene.left));
      nn::Var<T> right(image_to_tensor<T>(scene.right));
      auto out = model_->forward(left, right);
      const auto pred = tensor_to_disparity(out.d1.value(), 0);
      const auto depth = tensor_to_normalized_depth(out.norm_depth.value(), 0);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (scene.gt_disparity.valid[i]) {
          const double e = std::abs(pred.values[i] - scene.gt_disparity.values[i]);
          abs_err += e;
          n_gt1 += e > 1.0;
          ++n_disp;
        }
        if (scene.gt_normalized_depth.valid[i]) {
          depth_err +=
              std::abs(depth.values[i] - scene.gt_normalized_depth.values[i]);
          ++n_depth;
        }
      }
    }
    EvalSnapshot snap;
    snap.epe = n_disp ? abs_err / double(n_disp) : 0.0;
    snap.rate_gt_1px = n_disp ? double(n_gt1) / double(n_disp) : 0.0;
    snap.depth_mae = n_depth ? depth_err / double(n_depth) : 0.0;
    return snap;
  }

  void save(const std::string& path, int next_step) {
    nlohmann::json state;
    state["train_config"] = cfg_.to_json();
    state["next_step"] = next_step;
    state["normalizer"] = normalizer_.to_json();
    save_checkpoint<T>(path, cfg_.model, *model_, state, optimizer_.get());
  }

  TrainConfig cfg_;
  std::unique_ptr<DvaNet<T>> model_;
  std::unique_ptr<nn::AdamW<T>> optimizer_;
  LossNormalizer normalizer_;
  std::vector<SyntheticScene> scenes_;
  std::vector<SyntheticScene> held_out_;
  std::unique_ptr<Batch> full_batch_;
  std::unique_ptr<Batch> step_batch_;
};

}  // namespace dva
