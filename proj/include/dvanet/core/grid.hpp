#pragma once

#include <cstdint>
#include <vector>

namespace dva {

// Dense 2D grid of doubles with a per-pixel validity mask. Downstream code
// never sees sentinel values; invalid pixels are excluded by mask.
struct MaskedGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  MaskedGrid() = default;
  MaskedGrid(int h, int w, double fill = 0.0, bool all_valid = true)
      : height(h),
        width(w),
        values(std::size_t(h) * std::size_t(w), fill),
        valid(std::size_t(h) * std::size_t(w), all_valid ? 1 : 0) {}

  std::size_t idx(int y, int x) const { return std::size_t(y) * width + x; }
  double& at(int y, int x) { return values[idx(y, x)]; }
  double at(int y, int x) const { return values[idx(y, x)]; }
  bool is_valid(int y, int x) const { return valid[idx(y, x)] != 0; }
  void set(int y, int x, double v, bool ok = true) {
    values[idx(y, x)] = v;
    valid[idx(y, x)] = ok ? 1 : 0;
  }
  void invalidate(int y, int x) { valid[idx(y, x)] = 0; }

  std::size_t size() const { return values.size(); }
  bool same_shape(const MaskedGrid& o) const {
    return height == o.height && width == o.width;
  }
  std::int64_t count_valid() const {
    std::int64_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

// Strong roles for the same storage: disparity in pixels, depth in meters,
// normalized depth in [0, 1].
struct DisparityMap : MaskedGrid {
  using MaskedGrid::MaskedGrid;
};

struct DepthMap : MaskedGrid {
  using MaskedGrid::MaskedGrid;
};

struct NormalizedDepthMap : MaskedGrid {
  using MaskedGrid::MaskedGrid;
};

}  // namespace dva
