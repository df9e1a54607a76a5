#pragma once

#include <string>
#include <vector>

#include "dvanet/geometry.hpp"

namespace dva {

// ASCII PLY, `element vertex N` with float x/y/z properties.
void write_ply(const std::vector<Point3>& points, const std::string& path);
std::vector<Point3> read_ply(const std::string& path);

}  // namespace dva
