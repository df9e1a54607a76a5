#include "dvanet/io/manifest.hpp"

#include <filesystem>
#include <fstream>

#include "dvanet/core/errors.hpp"
#include "dvanet/io/pfm.hpp"
#include "dvanet/io/png16.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace dva {

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kitti: return "kitti";
    case DatasetKind::sceneflow: return "sceneflow";
    case DatasetKind::rsrd: return "rsrd";
    case DatasetKind::synthetic: return "synthetic";
  }
  return "synthetic";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "kitti") return DatasetKind::kitti;
  if (s == "sceneflow") return DatasetKind::sceneflow;
  if (s == "rsrd") return DatasetKind::rsrd;
  if (s == "synthetic") return DatasetKind::synthetic;
  throw DataError("manifest: unknown dataset kind: " + s);
}

std::vector<SampleRecord> load_manifest(const std::string& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  std::vector<SampleRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest: line " + std::to_string(line_no) + ": " + e.what());
    }
    SampleRecord r;
    r.left_path = resolve(j.at("left").get<std::string>());
    r.right_path = resolve(j.at("right").get<std::string>());
    r.gt_path = resolve(j.at("gt").get<std::string>());
    r.dataset_kind = dataset_kind_from_string(j.value("dataset", "synthetic"));
    if (j.contains("calib")) {
      const auto& c = j["calib"];
      r.calib.focal_length_px = c.at("focal_px").get<double>();
      r.calib.baseline_m = c.at("baseline_m").get<double>();
      if (c.contains("cx") && c.contains("cy"))
        r.calib.principal_point = {{c["cx"].get<double>(), c["cy"].get<double>()}};
    }
    if (check_files) {
      for (const auto& p : {r.left_path, r.right_path, r.gt_path})
        if (!fs::exists(p))
          throw DataError("manifest: referenced file missing: " + p);
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("manifest: cannot write " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["left"] = r.left_path;
    j["right"] = r.right_path;
    j["gt"] = r.gt_path;
    j["dataset"] = to_string(r.dataset_kind);
    nlohmann::json c;
    c["focal_px"] = r.calib.focal_length_px;
    c["baseline_m"] = r.calib.baseline_m;
    if (r.calib.principal_point) {
      c["cx"] = r.calib.principal_point->first;
      c["cy"] = r.calib.principal_point->second;
    }
    j["calib"] = c;
    out << j.dump() << "\n";
  }
}

DisparityMap load_gt_disparity(const SampleRecord& record) {
  switch (record.dataset_kind) {
    case DatasetKind::kitti:
      return read_kitti_disparity(record.gt_path);
    case DatasetKind::sceneflow:
    case DatasetKind::synthetic:
      return disparity_from_pfm(read_pfm(record.gt_path));
    case DatasetKind::rsrd: {
      // depth container; convert through the sample calibration
      const auto depth = read_depth_png(record.gt_path);
      return depth_to_disparity(depth, record.calib);
    }
  }
  throw DataError("manifest: unhandled dataset kind");
}

}  // namespace dva
