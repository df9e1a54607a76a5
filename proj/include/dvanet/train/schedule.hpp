#pragma once

#include "json.hpp"

namespace dva {

// One-cycle learning rate with linear anneal: warm up from max_lr/div_factor
// to max_lr over pct_start of the run, then anneal linearly to
// max_lr/final_div_factor (effectively zero).
struct OneCycleSchedule {
  double max_lr = 1.4e-3;
  int total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  double lr_at(int step) const;

  nlohmann::json to_json() const;
  static OneCycleSchedule from_json(const nlohmann::json& j);
};

}  // namespace dva
