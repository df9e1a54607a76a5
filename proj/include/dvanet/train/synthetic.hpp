#pragma once

#include <cstdint>
#include <optional>

#include "dvanet/core/grid.hpp"
#include "dvanet/io/image.hpp"

namespace dva {

enum class SceneKind { constant, ramp, planar };

std::string to_string(SceneKind kind);
SceneKind scene_kind_from_string(const std::string& s);

struct SyntheticSceneOptions {
  double d_min = 1.0;              // normalized-depth label scale
  bool textureless_band = true;    // flat region exercising weak texture
  std::optional<double> constant_disparity;  // forces the constant field
};

// Stereo pair with exact ground truth. The right view is resampled from an
// extended texture canvas under the rectified convention d = x_l - x_r, so
// integer constant-disparity scenes reproduce the left image exactly.
struct SyntheticScene {
  SceneKind kind = SceneKind::constant;
  RgbImage left, right;
  DisparityMap gt_disparity;
  NormalizedDepthMap gt_normalized_depth;
  std::uint64_t seed = 0;
};

SyntheticScene generate_synthetic_scene(SceneKind kind, int width, int height,
                                        int d_max, std::uint64_t seed,
                                        const SyntheticSceneOptions& opts = {});

}  // namespace dva
