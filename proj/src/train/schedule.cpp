#include "dvanet/train/schedule.hpp"

#include <algorithm>

#include "dvanet/core/errors.hpp"

namespace dva {

double OneCycleSchedule::lr_at(int step) const {
  if (total_steps < 1) throw DataError("schedule: total_steps must be >= 1");
  const double initial = max_lr / div_factor;
  const double final_lr = max_lr / final_div_factor;
  if (total_steps == 1) return max_lr;
  const int s = std::clamp(step, 0, total_steps - 1);
  const int peak = std::max(1, int(pct_start * (total_steps - 1)));
  if (s <= peak) {
    const double t = double(s) / double(peak);
    return initial + t * (max_lr - initial);
  }
  const double t = double(s - peak) / double(total_steps - 1 - peak);
  return max_lr + t * (final_lr - max_lr);
}

nlohmann::json OneCycleSchedule::to_json() const {
  return {{"max_lr", max_lr},
          {"total_steps", total_steps},
          {"pct_start", pct_start},
          {"div_factor", div_factor},
          {"final_div_factor", final_div_factor}};
}

OneCycleSchedule OneCycleSchedule::from_json(const nlohmann::json& j) {
  OneCycleSchedule s;
  s.max_lr = j.at("max_lr").get<double>();
  s.total_steps = j.at("total_steps").get<int>();
  s.pct_start = j.at("pct_start").get<double>();
  s.div_factor = j.at("div_factor").get<double>();
  s.final_div_factor = j.at("final_div_factor").get<double>();
  return s;
}

}  // namespace dva
