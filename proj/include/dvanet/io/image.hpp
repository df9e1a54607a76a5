#pragma once

#include <string>
#include <vector>

#include "dvanet/core/grid.hpp"

namespace dva {

// Planar RGB image with values in [0, 1], layout [3][height][width].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(int h, int w) : width(w), height(h), data(std::size_t(3) * h * w, 0.f) {}
  float& at(int c, int y, int x) {
    return data[(std::size_t(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(std::size_t(c) * height + y) * width + x];
  }
};

// PNG (8-bit rgb/gray) or PPM (P6), selected by extension.
RgbImage read_image(const std::string& path);
void write_image_png(const std::string& path, const RgbImage& image);
void write_image_ppm(const std::string& path, const RgbImage& image);

RgbImage resize_bilinear(const RgbImage& image, int out_width, int out_height);

// Resize (preserving content) then center-crop so both dimensions are
// divisible by `multiple`. The horizontal scale factor is reported so
// disparity labels can be rescaled to match.
struct Preprocessed {
  RgbImage image;
  double horizontal_scale = 1.0;
};
Preprocessed preprocess_to_multiple(const RgbImage& image, int multiple,
                                    int target_width = 0, int target_height = 0);

}  // namespace dva
