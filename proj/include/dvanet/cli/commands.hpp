#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dvanet/metrics.hpp"
#include "dvanet/train/config.hpp"

namespace dva::cli {

// Subcommand implementations, separated from argument parsing so they can be
// driven directly by tests. All return a process exit code (0 on success);
// argument/data problems surface as UsageError/DataError and are mapped to
// exit codes 1/2 by the entry point.

struct EvaluateArgs {
  std::string pred_dir;
  std::string gt_dir;
  std::string out_dir;
  std::string gt_format = "pfm";  // pfm | kitti | depth
  double depth_scale_mm = 1.0;    // for gt_format = depth
  StereoCalibration calib;
  WrdeConfig wrde;
  D1Thresholds d1;
};
int cmd_evaluate(const EvaluateArgs& args, std::ostream& log);

struct CompareArgs {
  std::vector<std::string> report_dirs;
  std::string out_dir;
};
int cmd_compare(const CompareArgs& args, std::ostream& log);

struct InferArgs {
  std::string checkpoint;
  std::vector<std::pair<std::string, std::string>> pairs;  // left, right
  std::string out_dir;
  std::string format = "pfm";  // pfm | png (KITTI 16-bit)
  bool dump_attention = false;
  bool export_ply = false;
  std::optional<StereoCalibration> calib;  // required for --ply
  int resize_width = 0;                    // 0 = keep
  int resize_height = 0;
};
int cmd_infer(const InferArgs& args, std::ostream& log);

struct TrainToyArgs {
  TrainConfig config;
};
int cmd_train_toy(const TrainToyArgs& args, std::ostream& log);

struct ExportPointcloudArgs {
  std::string disparity_path;
  std::string format = "auto";  // auto | pfm | kitti
  StereoCalibration calib;
  std::string out_path;
};
int cmd_export_pointcloud(const ExportPointcloudArgs& args, std::ostream& log);

// Invariant battery: prints one line per check, returns the failure count.
int run_selftest(std::ostream& log);
int cmd_selftest(std::ostream& log);  // 0 or exit code 3

// Shared helper: resolved-configuration echo written next to command outputs.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const nlohmann::json& config);

}  // namespace dva::cli
