#include "dvanet/io/ply.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dvanet/core/errors.hpp"

namespace dva {

void write_ply(const std::vector<Point3>& points, const std::string& path) {
  for (const auto& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw DataError("ply: refusing to write non-finite point");
  std::ofstream out(path);
  if (!out) throw DataError("ply: cannot write " + path);
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << points.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "end_header\n";
  char line[96];
  for (const auto& p : points) {
    // stored as 32-bit floats; print at float precision
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", double(float(p.x)),
                  double(float(p.y)), double(float(p.z)));
    out << line;
  }
  if (!out) throw DataError("ply: write failed for " + path);
}

std::vector<Point3> read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("ply: cannot open " + path);
  std::string line;
  std::size_t count = 0;
  bool in_header = true;
  if (!std::getline(in, line) || line != "ply") throw DataError("ply: bad magic in " + path);
  while (in_header && std::getline(in, line)) {
    if (line.rfind("element vertex ", 0) == 0)
      count = std::stoull(line.substr(15));
    else if (line == "end_header")
      in_header = false;
  }
  if (in_header) throw DataError("ply: missing end_header in " + path);
  std::vector<Point3> points;
  points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw DataError("ply: truncated vertex list in " + path);
    std::istringstream ls(line);
    Point3 p;
    if (!(ls >> p.x >> p.y >> p.z)) throw DataError("ply: malformed vertex in " + path);
    points.push_back(p);
  }
  return points;
}

}  // namespace dva
