#pragma once

#include <string>
#include <vector>

#include "dvanet/core/grid.hpp"

namespace dva {

// Portable float map, grayscale `Pf` only. In-memory rows are top-down; the
// file stores them bottom-up with endianness given by the sign of the scale.
struct PfmImage {
  int width = 0;
  int height = 0;
  double scale = -1.0;
  std::vector<float> values;  // top-down row-major
};

PfmImage read_pfm(const std::string& path);

// Writes little-endian (scale -1.0 unless overridden with a negative scale).
void write_pfm(const std::string& path, const PfmImage& image);

// NaN/Inf samples become invalid pixels.
DisparityMap disparity_from_pfm(const PfmImage& image);
PfmImage pfm_from_disparity(const DisparityMap& map);  // invalid -> +Inf

}  // namespace dva
