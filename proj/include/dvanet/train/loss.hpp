#pragma once

#include <array>
#include <cmath>

#include "dvanet/core/errors.hpp"
#include "dvanet/core/grid.hpp"
#include "json.hpp"

namespace dva {

// Smooth-L1 over the joint valid mask: 0.5 x^2 below |x| = 1, |x| - 0.5 above.
inline double smooth_l1(const MaskedGrid& pred, const MaskedGrid& gt) {
  if (!pred.same_shape(gt)) throw DataError("smooth_l1: shape mismatch");
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    const double x = pred.values[i] - gt.values[i];
    const double ax = std::abs(x);
    acc += ax < 1.0 ? 0.5 * x * x : ax - 0.5;
    ++n;
  }
  if (n == 0) throw DataError("smooth_l1: empty joint mask");
  return acc / double(n);
}

// Per-loss EMA magnitudes used as detached normalizers, so the three loss
// terms contribute comparable gradients without hand-tuned weights.
struct LossNormalizer {
  double decay = 0.99;
  double eps = 1e-8;
  bool initialized = false;
  std::array<double, 3> ema = {0.0, 0.0, 0.0};

  std::array<double, 3> update(const std::array<double, 3>& losses) {
    if (!(decay > 0.0 && decay < 1.0)) throw DataError("loss normalizer: bad decay");
    if (!initialized) {
      ema = losses;
      initialized = true;
    } else {
      for (int i = 0; i < 3; ++i)
        ema[std::size_t(i)] =
            decay * ema[std::size_t(i)] + (1.0 - decay) * losses[std::size_t(i)];
    }
    std::array<double, 3> normalizers;
    for (int i = 0; i < 3; ++i)
      normalizers[std::size_t(i)] = std::max(ema[std::size_t(i)], eps);
    return normalizers;
  }

  nlohmann::json to_json() const {
    return {{"decay", decay},
            {"eps", eps},
            {"initialized", initialized},
            {"ema", {ema[0], ema[1], ema[2]}}};
  }
  static LossNormalizer from_json(const nlohmann::json& j) {
    LossNormalizer n;
    n.decay = j.at("decay").get<double>();
    n.eps = j.at("eps").get<double>();
    n.initialized = j.at("initialized").get<bool>();
    const auto& e = j.at("ema");
    n.ema = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
    return n;
  }
};

struct LossReport {
  double loss_d0 = 0.0;
  double loss_d1 = 0.0;
  double loss_depth = 0.0;
  std::array<double, 3> normalizers = {1.0, 1.0, 1.0};
  double total = 0.0;
};

}  // namespace dva
