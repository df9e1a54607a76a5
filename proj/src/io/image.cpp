#include "dvanet/io/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dvanet/core/errors.hpp"
#include "dvanet/io/png16.hpp"

namespace dva {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw DataError("ppm: expected binary P6 with maxval 255: " + path);
  in.get();
  std::vector<std::uint8_t> buf(std::size_t(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!in) throw DataError("ppm: truncated payload in " + path);
  RgbImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = float(buf[(std::size_t(y) * w + x) * 3 + c]) / 255.f;
  return img;
}

}  // namespace

RgbImage read_image(const std::string& path) {
  if (ends_with(path, ".ppm")) return read_ppm(path);
  const auto png = read_png(path);
  RgbImage img(png.height, png.width);
  const double denom = png.bit_depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      const std::size_t base = (std::size_t(y) * png.width + x) * png.channels;
      for (int c = 0; c < 3; ++c) {
        const std::size_t s = png.channels == 1 ? base : base + c;
        img.at(c, y, x) = float(double(png.samples[s]) / denom);
      }
    }
  return img;
}

void write_image_png(const std::string& path, const RgbImage& image) {
  std::vector<std::uint8_t> rgb(std::size_t(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.f, 1.f);
        rgb[(std::size_t(y) * image.width + x) * 3 + c] =
            std::uint8_t(std::lround(v * 255.f));
      }
  write_png_rgb8(path, image.width, image.height, rgb);
}

void write_image_ppm(const std::string& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ppm: cannot write " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.f, 1.f);
        out.put(char(std::lround(v * 255.f)));
      }
  if (!out) throw DataError("ppm: write failed for " + path);
}

RgbImage resize_bilinear(const RgbImage& image, int out_width, int out_height) {
  if (out_width <= 0 || out_height <= 0) throw DataError("resize: bad target size");
  RgbImage out(out_height, out_width);
  const double sx = double(image.width) / out_width;
  const double sy = double(image.height) / out_height;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::min((y + 0.5) * sy - 0.5, double(image.height - 1));
    const int y0 = std::max(0, int(std::floor(fy)));
    const int y1 = std::min(image.height - 1, y0 + 1);
    const double ty = std::max(0.0, fy - y0);
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::min((x + 0.5) * sx - 0.5, double(image.width - 1));
      const int x0 = std::max(0, int(std::floor(fx)));
      const int x1 = std::min(image.width - 1, x0 + 1);
      const double tx = std::max(0.0, fx - x0);
      for (int c = 0; c < 3; ++c) {
        const double a = image.at(c, y0, x0) * (1 - tx) + image.at(c, y0, x1) * tx;
        const double b = image.at(c, y1, x0) * (1 - tx) + image.at(c, y1, x1) * tx;
        out.at(c, y, x) = float(a * (1 - ty) + b * ty);
      }
    }
  }
  return out;
}

Preprocessed preprocess_to_multiple(const RgbImage& image, int multiple,
                                    int target_width, int target_height) {
  if (multiple <= 0) throw DataError("preprocess: bad multiple");
  int tw = target_width > 0 ? target_width : image.width;
  int th = target_height > 0 ? target_height : image.height;
  Preprocessed out;
  out.horizontal_scale = double(tw) / image.width;
  RgbImage resized =
      (tw == image.width && th == image.height) ? image : resize_bilinear(image, tw, th);
  const int cw = (tw / multiple) * multiple;
  const int ch = (th / multiple) * multiple;
  if (cw <= 0 || ch <= 0)
    throw DataError("preprocess: image smaller than required multiple");
  if (cw == tw && ch == th) {
    out.image = std::move(resized);
    return out;
  }
  const int ox = (tw - cw) / 2;
  const int oy = (th - ch) / 2;
  RgbImage cropped(ch, cw);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) cropped.at(c, y, x) = resized.at(c, y + oy, x + ox);
  out.image = std::move(cropped);
  return out;
}

}  // namespace dva
