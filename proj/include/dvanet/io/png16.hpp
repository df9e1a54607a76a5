#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvanet/core/grid.hpp"

namespace dva {

// Minimal PNG support for the two containers this project exchanges:
// 16-bit grayscale (disparity/depth) and 8-bit RGB (camera images).
// Palette and interlaced files are rejected rather than reinterpreted.
struct PngImage {
  int width = 0;
  int height = 0;
  int bit_depth = 0;  // 8 or 16
  int channels = 0;   // 1 (gray) or 3 (rgb)
  std::vector<std::uint16_t> samples;  // row-major, channel-interleaved
};

PngImage read_png(const std::string& path);
void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels);
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb);

// KITTI disparity convention: 16-bit grayscale, disparity = raw / 256,
// raw == 0 marks an invalid pixel.
DisparityMap read_kitti_disparity(const std::string& path);
void write_kitti_disparity(const std::string& path, const DisparityMap& map);

// 16-bit depth container: depth_m = raw * scale_mm / 1000, raw == 0 invalid.
DepthMap read_depth_png(const std::string& path, double scale_mm = 1.0);
void write_depth_png(const std::string& path, const DepthMap& map,
                     double scale_mm = 1.0);

}  // namespace dva
