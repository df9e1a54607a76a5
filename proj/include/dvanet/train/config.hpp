#pragma once

#include <cstdint>
#include <string>

#include "dvanet/net/config.hpp"
#include "dvanet/train/schedule.hpp"

namespace dva {

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();

  // data
  int width = 128;
  int height = 64;
  int num_scenes = 4;
  double d_min = 1.0;
  bool textureless_band = true;

  // optimization
  int steps = 300;
  int stop_after = 0;  // 0 = run all scheduled steps; used for resume tests
  int batch_size = 4;
  double max_lr = 8e-3;  // desk-scale default; full-scale runs use 1.4e-3
  double weight_decay = 1e-4;
  double ema_decay = 0.99;

  std::uint64_t seed = 1;
  bool deterministic = true;
  int eval_every = 50;
  std::string out_dir;

  OneCycleSchedule schedule() const {
    OneCycleSchedule s;
    s.max_lr = max_lr;
    s.total_steps = steps;
    return s;
  }

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Key=value text format, '#' comments. Unknown keys are rejected.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

}  // namespace dva
