#include "dvanet/io/pfm.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "dvanet/core/errors.hpp"

namespace dva {

namespace {

constexpr bool kHostLittle = std::endian::native == std::endian::little;

void swap_bytes(float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, data + i, 4);
    u = __builtin_bswap32(u);
    std::memcpy(data + i, &u, 4);
  }
}

// One whitespace-delimited token; PFM headers allow any blank separator.
std::string next_token(std::istream& in) {
  std::string tok;
  in >> tok;
  return tok;
}

}  // namespace

PfmImage read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("pfm: cannot open " + path);

  const std::string magic = next_token(in);
  if (magic == "PF")
    throw DataError("pfm: color PF not supported, expected grayscale Pf: " + path);
  if (magic != "Pf") throw DataError("pfm: bad magic in " + path);

  PfmImage img;
  try {
    img.width = std::stoi(next_token(in));
    img.height = std::stoi(next_token(in));
    img.scale = std::stod(next_token(in));
  } catch (const std::exception&) {
    throw DataError("pfm: malformed header in " + path);
  }
  if (img.width <= 0 || img.height <= 0 || img.scale == 0.0)
    throw DataError("pfm: malformed header in " + path);

  in.get();  // single whitespace byte before the payload

  const std::size_t n = std::size_t(img.width) * std::size_t(img.height);
  img.values.resize(n);
  std::vector<float> row(std::size_t(img.width));
  // file rows are bottom-up
  for (int y = img.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
    if (!in) throw DataError("pfm: truncated payload in " + path);
    const bool file_little = img.scale < 0.0;
    if (file_little != kHostLittle) swap_bytes(row.data(), row.size());
    std::memcpy(img.values.data() + std::size_t(y) * img.width, row.data(),
                row.size() * 4);
  }
  return img;
}

void write_pfm(const std::string& path, const PfmImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.values.size() != std::size_t(image.width) * std::size_t(image.height))
    throw DataError("pfm: inconsistent image to write");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("pfm: cannot write " + path);
  const double scale = image.scale == 0.0 ? -1.0 : -std::abs(image.scale);
  out << "Pf\n" << image.width << " " << image.height << "\n" << scale << "\n";
  std::vector<float> row(std::size_t(image.width));
  for (int y = image.height - 1; y >= 0; --y) {
    std::memcpy(row.data(), image.values.data() + std::size_t(y) * image.width,
                row.size() * 4);
    if (!kHostLittle) swap_bytes(row.data(), row.size());
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size() * 4));
  }
  if (!out) throw DataError("pfm: write failed for " + path);
}

DisparityMap disparity_from_pfm(const PfmImage& image) {
  DisparityMap d(image.height, image.width, 0.0, false);
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    const float v = image.values[i];
    if (std::isfinite(v)) {
      d.values[i] = double(v);
      d.valid[i] = 1;
    }
  }
  return d;
}

PfmImage pfm_from_disparity(const DisparityMap& map) {
  PfmImage img;
  img.width = map.width;
  img.height = map.height;
  img.scale = -1.0;
  img.values.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i)
    img.values[i] = map.valid[i] ? float(map.values[i])
                                 : std::numeric_limits<float>::infinity();
  return img;
}

}  // namespace dva
