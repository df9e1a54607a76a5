#include "dvanet/train/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "dvanet/core/errors.hpp"
#include "dvanet/core/random.hpp"

namespace dva {

std::string to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::constant: return "constant";
    case SceneKind::ramp: return "ramp";
    case SceneKind::planar: return "planar";
  }
  return "constant";
}

SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "constant") return SceneKind::constant;
  if (s == "ramp") return SceneKind::ramp;
  if (s == "planar") return SceneKind::planar;
  throw DataError("unknown scene kind: " + s);
}

namespace {

// Band-limited noise plus a few flat rectangles; wider than the output so
// the right view can sample past the left image border.
RgbImage make_canvas(int height, int canvas_width, Rng& rng, bool textureless_band) {
  RgbImage canvas(height, canvas_width);
  std::vector<float> base(std::size_t(height) * canvas_width);
  for (int c = 0; c < 3; ++c) {
    for (auto& v : base) v = float(rng.uniform());
    // two box-blur passes tame the spectrum without killing local contrast
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<float> next(base.size());
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < canvas_width; ++x) {
          float acc = 0.f;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= height || xx < 0 || xx >= canvas_width) continue;
              acc += base[std::size_t(yy) * canvas_width + xx];
              ++n;
            }
          next[std::size_t(y) * canvas_width + x] = acc / float(n);
        }
      base.swap(next);
    }
    float lo = 1e9f, hi = -1e9f;
    for (float v : base) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float span = std::max(1e-6f, hi - lo);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < canvas_width; ++x)
        canvas.at(c, y, x) = 0.1f + 0.8f * (base[std::size_t(y) * canvas_width + x] - lo) / span;
  }

  // a few solid rectangles as distinct structures
  const int rects = 3 + int(rng.below(3));
  for (int r = 0; r < rects; ++r) {
    const int rw = 3 + int(rng.below(std::uint32_t(std::max(2, canvas_width / 6))));
    const int rh = 3 + int(rng.below(std::uint32_t(std::max(2, height / 4))));
    const int x0 = int(rng.below(std::uint32_t(std::max(1, canvas_width - rw))));
    const int y0 = int(rng.below(std::uint32_t(std::max(1, height - rh))));
    float col[3] = {float(rng.uniform(0.15, 0.85)), float(rng.uniform(0.15, 0.85)),
                    float(rng.uniform(0.15, 0.85))};
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) canvas.at(c, y, x) = col[c];
  }

  if (textureless_band) {
    // flat horizontal band: no texture at all, labels stay valid
    const int bh = std::max(2, height / 6);
    const int y0 = height / 2;
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < std::min(height, y0 + bh); ++y)
        for (int x = 0; x < canvas_width; ++x) canvas.at(c, y, x) = 0.55f;
  }
  return canvas;
}

float sample_linear(const RgbImage& img, int c, int y, double x) {
  const int x0 = int(std::floor(x));
  const int x1 = std::min(img.width - 1, x0 + 1);
  const double t = x - x0;
  return float((1.0 - t) * img.at(c, y, x0) + t * img.at(c, y, x1));
}

}  // namespace

SyntheticScene generate_synthetic_scene(SceneKind kind, int width, int height,
                                        int d_max, std::uint64_t seed,
                                        const SyntheticSceneOptions& opts) {
  if (width < 8 || height < 4) throw DataError("synthetic: image too small");
  if (d_max >= width / 2) throw DataError("synthetic: d_max must be below width/2");
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x1234567ull);

  // disparity field in left-image coordinates: d = a + b*x + c*y
  double a = 0.0, b = 0.0, cy = 0.0;
  const double lo = std::max(1.0, 0.2 * d_max);
  const double hi = 0.8 * d_max;
  switch (kind) {
    case SceneKind::constant: {
      a = opts.constant_disparity ? *opts.constant_disparity
                                  : std::floor(rng.uniform(lo, hi) + 0.5);
      break;
    }
    case SceneKind::ramp: {
      const double d0 = rng.uniform(lo, 0.5 * hi);
      const double d1 = rng.uniform(0.6 * hi, hi);
      a = d0;
      b = (d1 - d0) / double(width - 1);
      break;
    }
    case SceneKind::planar: {
      a = rng.uniform(lo, 0.6 * hi);
      b = rng.uniform(0.0, 0.3 * hi) / double(width - 1);
      cy = rng.uniform(-0.2 * hi, 0.2 * hi) / double(height - 1);
      if (a + cy * (height - 1) < 1.0) cy = 0.0;  // keep strictly positive
      break;
    }
  }

  SyntheticScene scene;
  scene.kind = kind;
  scene.seed = seed;
  const int canvas_width = width + d_max + 2;
  const RgbImage canvas = make_canvas(height, canvas_width, rng, opts.textureless_band);

  scene.left = RgbImage(height, width);
  scene.right = RgbImage(height, width);
  scene.gt_disparity = DisparityMap(height, width, 0.0, false);

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double d = a + b * x + cy * y;
      if (!(d > 0.0) || d > double(d_max) - 1.0)
        throw InvariantError("synthetic: disparity field left its range");
      for (int c = 0; c < 3; ++c) scene.left.at(c, y, x) = canvas.at(c, y, x);
      // valid label only where the right-view correspondence exists
      scene.gt_disparity.set(y, x, d, x - d >= 0.0);
    }
    for (int xr = 0; xr < width; ++xr) {
      // invert x_r = x_l - d(x_l) for the affine field
      const double xl = (double(xr) + a + cy * y) / (1.0 - b);
      for (int c = 0; c < 3; ++c)
        scene.right.at(c, y, xr) = sample_linear(canvas, c, y, xl);
    }
  }

  scene.gt_normalized_depth = NormalizedDepthMap(height, width, 0.0, false);
  for (std::size_t i = 0; i < scene.gt_disparity.size(); ++i) {
    if (!scene.gt_disparity.valid[i]) continue;
    scene.gt_normalized_depth.values[i] =
        std::min(1.0, opts.d_min / scene.gt_disparity.values[i]);
    scene.gt_normalized_depth.valid[i] = 1;
  }
  return scene;
}

}  // namespace dva
