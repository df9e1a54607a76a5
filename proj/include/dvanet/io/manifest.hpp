#pragma once

#include <string>
#include <vector>

#include "dvanet/geometry.hpp"

namespace dva {

enum class DatasetKind { kitti, sceneflow, rsrd, synthetic };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& s);

// One stereo sample with its ground-truth label container and calibration.
// Calibration travels in the manifest because neither KITTI-style PNGs nor
// PFMs carry intrinsics.
struct SampleRecord {
  std::string left_path;
  std::string right_path;
  std::string gt_path;
  StereoCalibration calib;
  DatasetKind dataset_kind = DatasetKind::synthetic;
};

// JSON-lines file, one record per line. `check_files` verifies that all
// referenced paths exist (relative paths resolve against the manifest dir).
std::vector<SampleRecord> load_manifest(const std::string& path,
                                        bool check_files = true);
void save_manifest(const std::string& path, const std::vector<SampleRecord>& records);

// Ground-truth disparity dispatch: PFM for sceneflow/synthetic, 16-bit PNG
// (raw/256) for kitti, 16-bit depth PNG converted through calib for rsrd.
DisparityMap load_gt_disparity(const SampleRecord& record);

}  // namespace dva
