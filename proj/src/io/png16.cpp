#include "dvanet/io/png16.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "dvanet/core/errors.hpp"

namespace dva {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_be32(out, std::uint32_t(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = ::crc32(0L, out.data() + crc_start, uInt(out.size() - crc_start));
  put_be32(out, std::uint32_t(crc));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

void unfilter_rows(std::vector<std::uint8_t>& raw, int height, int row_bytes,
                   int bpp) {
  std::vector<std::uint8_t> prev(std::size_t(row_bytes), 0);
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = raw.data() + std::size_t(y) * (row_bytes + 1);
    const int type = row[0];
    std::uint8_t* cur = row + 1;
    switch (type) {
      case 0:
        break;
      case 1:
        for (int i = bpp; i < row_bytes; ++i) cur[i] = std::uint8_t(cur[i] + cur[i - bpp]);
        break;
      case 2:
        for (int i = 0; i < row_bytes; ++i) cur[i] = std::uint8_t(cur[i] + prev[i]);
        break;
      case 3:
        for (int i = 0; i < row_bytes; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          cur[i] = std::uint8_t(cur[i] + (left + prev[std::size_t(i)]) / 2);
        }
        break;
      case 4:
        for (int i = 0; i < row_bytes; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          const int up_left = i >= bpp ? prev[std::size_t(i - bpp)] : 0;
          cur[i] = std::uint8_t(cur[i] + paeth(left, prev[std::size_t(i)], up_left));
        }
        break;
      default:
        throw DataError("png: unknown filter type");
    }
    std::memcpy(prev.data(), cur, std::size_t(row_bytes));
  }
}

std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                       std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = uLongf(expected);
  const int rc = ::uncompress(out.data(), &out_len, in.data(), uLong(in.size()));
  if (rc != Z_OK || out_len != expected) throw DataError("png: corrupt image data");
  return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& in) {
  uLongf bound = ::compressBound(uLong(in.size()));
  std::vector<std::uint8_t> out(bound);
  const int rc = ::compress2(out.data(), &bound, in.data(), uLong(in.size()), 6);
  if (rc != Z_OK) throw DataError("png: compression failed");
  out.resize(bound);
  return out;
}

void write_png(const std::string& path, int width, int height, int bit_depth,
               int channels, const std::vector<std::uint8_t>& raw_rows) {
  std::vector<std::uint8_t> file(kSignature, kSignature + 8);
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, std::uint32_t(width));
  put_be32(ihdr, std::uint32_t(height));
  ihdr.push_back(std::uint8_t(bit_depth));
  ihdr.push_back(channels == 1 ? 0 : 2);  // gray or rgb
  ihdr.push_back(0);                      // compression
  ihdr.push_back(0);                      // filter method
  ihdr.push_back(0);                      // no interlace
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", zlib_deflate(raw_rows));
  append_chunk(file, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("png: cannot write " + path);
  out.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
  if (!out) throw DataError("png: write failed for " + path);
}

}  // namespace

PngImage read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("png: cannot open " + path);
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
    throw DataError("png: bad signature in " + path);

  PngImage img;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  std::size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = be32(file.data() + pos);
    if (pos + 12 + len > file.size()) throw DataError("png: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const std::uint8_t* payload = file.data() + pos + 8;
    const std::uint32_t stored_crc = be32(payload + len);
    const auto crc = ::crc32(0L, file.data() + pos + 4, uInt(4 + len));
    if (std::uint32_t(crc) != stored_crc) throw DataError("png: chunk crc mismatch in " + path);

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw DataError("png: bad IHDR in " + path);
      img.width = int(be32(payload));
      img.height = int(be32(payload + 4));
      img.bit_depth = payload[8];
      const int color_type = payload[9];
      if (payload[12] != 0) throw DataError("png: interlaced files not supported");
      if (color_type == 0)
        img.channels = 1;
      else if (color_type == 2)
        img.channels = 3;
      else
        throw DataError("png: unsupported color type in " + path);
      if (img.bit_depth != 8 && img.bit_depth != 16)
        throw DataError("png: unsupported bit depth in " + path);
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || img.width <= 0 || img.height <= 0)
    throw DataError("png: malformed file " + path);

  const int bytes_per_sample = img.bit_depth / 8;
  const int bpp = img.channels * bytes_per_sample;
  const int row_bytes = img.width * bpp;
  auto raw = zlib_inflate(idat, std::size_t(img.height) * std::size_t(row_bytes + 1));
  unfilter_rows(raw, img.height, row_bytes, bpp);

  img.samples.resize(std::size_t(img.width) * img.height * img.channels);
  std::size_t k = 0;
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t* row = raw.data() + std::size_t(y) * (row_bytes + 1) + 1;
    for (int i = 0; i < img.width * img.channels; ++i) {
      if (img.bit_depth == 16)
        img.samples[k++] = std::uint16_t((row[2 * i] << 8) | row[2 * i + 1]);
      else
        img.samples[k++] = row[i];
    }
  }
  return img;
}

void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels) {
  if (pixels.size() != std::size_t(width) * std::size_t(height))
    throw DataError("png: pixel buffer size mismatch");
  const int row_bytes = width * 2;
  std::vector<std::uint8_t> raw(std::size_t(height) * (row_bytes + 1));
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = raw.data() + std::size_t(y) * (row_bytes + 1);
    row[0] = 0;  // filter: none
    for (int x = 0; x < width; ++x) {
      const std::uint16_t v = pixels[std::size_t(y) * width + x];
      row[1 + 2 * x] = std::uint8_t(v >> 8);
      row[2 + 2 * x] = std::uint8_t(v & 0xff);
    }
  }
  write_png(path, width, height, 16, 1, raw);
}

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != std::size_t(width) * std::size_t(height) * 3)
    throw DataError("png: pixel buffer size mismatch");
  const int row_bytes = width * 3;
  std::vector<std::uint8_t> raw(std::size_t(height) * (row_bytes + 1));
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = raw.data() + std::size_t(y) * (row_bytes + 1);
    row[0] = 0;
    std::memcpy(row + 1, rgb.data() + std::size_t(y) * row_bytes, std::size_t(row_bytes));
  }
  write_png(path, width, height, 8, 3, raw);
}

DisparityMap read_kitti_disparity(const std::string& path) {
  const auto img = read_png(path);
  if (img.bit_depth != 16 || img.channels != 1)
    throw DataError("kitti disparity: expected 16-bit single-channel png: " + path);
  DisparityMap d(img.height, img.width, 0.0, false);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (img.samples[i] == 0) continue;  // 0 marks invalid
    d.values[i] = double(img.samples[i]) / 256.0;
    d.valid[i] = 1;
  }
  return d;
}

void write_kitti_disparity(const std::string& path, const DisparityMap& map) {
  std::vector<std::uint16_t> px(map.size(), 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (!map.valid[i]) continue;
    double raw = std::round(map.values[i] * 256.0);
    if (raw < 1.0) raw = 1.0;  // keep valid pixels distinguishable from the sentinel
    if (raw > 65535.0) raw = 65535.0;
    px[i] = std::uint16_t(raw);
  }
  write_png_gray16(path, map.width, map.height, px);
}

DepthMap read_depth_png(const std::string& path, double scale_mm) {
  const auto img = read_png(path);
  if (img.bit_depth != 16 || img.channels != 1)
    throw DataError("depth png: expected 16-bit single-channel png: " + path);
  DepthMap z(img.height, img.width, 0.0, false);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (img.samples[i] == 0) continue;
    z.values[i] = double(img.samples[i]) * scale_mm / 1000.0;
    z.valid[i] = 1;
  }
  return z;
}

void write_depth_png(const std::string& path, const DepthMap& map, double scale_mm) {
  std::vector<std::uint16_t> px(map.size(), 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (!map.valid[i]) continue;
    double raw = std::round(map.values[i] * 1000.0 / scale_mm);
    if (raw < 1.0) raw = 1.0;
    if (raw > 65535.0) raw = 65535.0;
    px[i] = std::uint16_t(raw);
  }
  write_png_gray16(path, map.width, map.height, px);
}

}  // namespace dva
