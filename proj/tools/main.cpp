#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dvanet/cli/commands.hpp"
#include "dvanet/core/errors.hpp"
#include "dvanet/core/parallel.hpp"
#include "dvanet/train/config.hpp"

namespace {

// zmin:zmax
void parse_range(const std::string& text, double& lo, double& hi) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw dva::UsageError("expected zmin:zmax, got " + text);
  try {
    lo = std::stod(text.substr(0, colon));
    hi = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw dva::UsageError("expected zmin:zmax, got " + text);
  }
}

struct CalibFlags {
  double focal = 0.0;
  double baseline = 0.0;
  double cx = -1.0;
  double cy = -1.0;

  void add_to(CLI::App* app, bool required) {
    auto* f = app->add_option("--focal", focal, "Focal length (pixels)");
    auto* b = app->add_option("--baseline", baseline, "Stereo baseline (meters)");
    if (required) {
      f->required();
      b->required();
    }
    app->add_option("--cx", cx, "Principal point x (default: image center)");
    app->add_option("--cy", cy, "Principal point y (default: image center)");
  }

  dva::StereoCalibration to_calib() const {
    dva::StereoCalibration c;
    c.focal_length_px = focal;
    c.baseline_m = baseline;
    if (cx >= 0.0 && cy >= 0.0) c.principal_point = {{cx, cy}};
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvanet: texture-aware stereo matching and depth-wise evaluation"};
  app.require_subcommand(1);

  int workers = 1;
  std::uint64_t seed = 1;
  bool deterministic = true;
  app.add_option("--workers", workers, "Worker threads for per-image evaluation");
  app.add_option("--seed", seed, "Seed for stochastic components");
  app.add_flag("--deterministic,!--no-deterministic", deterministic,
               "Deterministic mode (default on)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Disparity metrics + depth-wise error");
  dva::cli::EvaluateArgs eval_args;
  std::string wrde_range = "2:8";
  evaluate->add_option("--pred", eval_args.pred_dir, "Predicted disparity dir")->required();
  evaluate->add_option("--gt", eval_args.gt_dir, "Ground-truth dir")->required();
  evaluate->add_option("--out", eval_args.out_dir, "Output dir")->required();
  evaluate->add_option("--gt-format", eval_args.gt_format, "pfm | kitti | depth");
  evaluate->add_option("--depth-scale-mm", eval_args.depth_scale_mm,
                       "Raw unit in mm for --gt-format depth");
  evaluate->add_option("--wrde-range", wrde_range, "Depth range of interest zmin:zmax (m)");
  evaluate->add_option("--wrde-interval", eval_args.wrde.interval, "Bin interval (m)");
  evaluate->add_option("--d1-abs", eval_args.d1.abs_px, "D1 absolute threshold (px)");
  evaluate->add_option("--d1-rel", eval_args.d1.rel, "D1 relative threshold");
  CalibFlags eval_calib;
  eval_calib.add_to(evaluate, /*required=*/true);

  // compare
  auto* compare = app.add_subcommand("compare", "Compare evaluation reports");
  dva::cli::CompareArgs compare_args;
  compare->add_option("dirs", compare_args.report_dirs, "Report directories")->required();
  compare->add_option("--out", compare_args.out_dir, "Output dir");

  // infer
  auto* infer = app.add_subcommand("infer", "Run the network on stereo pairs");
  dva::cli::InferArgs infer_args;
  std::string left_path, right_path, pair_list;
  infer->add_option("--checkpoint", infer_args.checkpoint, "Model checkpoint")->required();
  infer->add_option("--left", left_path, "Left image");
  infer->add_option("--right", right_path, "Right image");
  infer->add_option("--list", pair_list, "File with 'left right' per line");
  infer->add_option("--out", infer_args.out_dir, "Output dir")->required();
  infer->add_option("--format", infer_args.format, "pfm | png");
  infer->add_flag("--dump-attention", infer_args.dump_attention,
                  "Write channel/disparity attention maps");
  infer->add_flag("--ply", infer_args.export_ply, "Export point cloud (needs calib)");
  infer->add_option("--resize-width", infer_args.resize_width, "Resize before inference");
  infer->add_option("--resize-height", infer_args.resize_height, "Resize before inference");
  CalibFlags infer_calib;
  infer_calib.add_to(infer, /*required=*/false);

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Desk-scale training on synthetic scenes");
  std::string config_path;
  std::string out_dir;
  int steps = -1, batch = -1, dmax = -1, scene_count = -1, width = -1, height = -1;
  double max_lr = -1.0, d_min = -1.0;
  train->add_option("--config", config_path, "Key=value config file");
  train->add_option("--out", out_dir, "Output dir (checkpoint + loss trace)");
  train->add_option("--steps", steps, "Training steps");
  train->add_option("--batch", batch, "Batch size");
  train->add_option("--dmax", dmax, "Maximum disparity");
  train->add_option("--dmin", d_min, "Minimum disparity for depth labels");
  train->add_option("--scenes", scene_count, "Synthetic scene count");
  train->add_option("--width", width, "Scene width");
  train->add_option("--height", height, "Scene height");
  train->add_option("--max-lr", max_lr, "Peak one-cycle learning rate");

  // export-pointcloud
  auto* ply = app.add_subcommand("export-pointcloud", "Disparity map to PLY");
  dva::cli::ExportPointcloudArgs ply_args;
  ply->add_option("--disparity", ply_args.disparity_path, "Disparity file")->required();
  ply->add_option("--format", ply_args.format, "auto | pfm | kitti");
  ply->add_option("--out", ply_args.out_path, "Output .ply path")->required();
  CalibFlags ply_calib;
  ply_calib.add_to(ply, /*required=*/true);

  // selftest
  auto* selftest = app.add_subcommand("selftest", "Run the invariant battery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage problems exit 1
  }

  dva::set_worker_count(workers);

  try {
    if (*evaluate) {
      parse_range(wrde_range, eval_args.wrde.z_min, eval_args.wrde.z_max);
      eval_args.calib = eval_calib.to_calib();
      return dva::cli::cmd_evaluate(eval_args, std::cout);
    }
    if (*compare) return dva::cli::cmd_compare(compare_args, std::cout);
    if (*infer) {
      if (left_path.empty() != right_path.empty())
        throw dva::UsageError("infer: --left and --right must be given together");
      if (!left_path.empty()) infer_args.pairs.push_back({left_path, right_path});
      if (!pair_list.empty()) {
        std::ifstream in(pair_list);
        if (!in) throw dva::DataError("infer: cannot open " + pair_list);
        std::string l, r;
        while (in >> l >> r) infer_args.pairs.push_back({l, r});
      }
      if (infer_calib.focal > 0.0) infer_args.calib = infer_calib.to_calib();
      return dva::cli::cmd_infer(infer_args, std::cout);
    }
    if (*train) {
      dva::cli::TrainToyArgs args;
      if (!config_path.empty()) args.config = dva::load_train_config(config_path);
      if (steps > 0) args.config.steps = steps;
      if (batch > 0) args.config.batch_size = batch;
      if (dmax > 0) args.config.model.max_disparity = dmax;
      if (d_min > 0) args.config.d_min = d_min;
      if (scene_count > 0) args.config.num_scenes = scene_count;
      if (width > 0) args.config.width = width;
      if (height > 0) args.config.height = height;
      if (max_lr > 0) args.config.max_lr = max_lr;
      if (!out_dir.empty()) args.config.out_dir = out_dir;
      args.config.seed = seed;
      args.config.deterministic = deterministic;
      return dva::cli::cmd_train_toy(args, std::cout);
    }
    if (*ply) {
      ply_args.calib = ply_calib.to_calib();
      return dva::cli::cmd_export_pointcloud(ply_args, std::cout);
    }
    if (*selftest) return dva::cli::cmd_selftest(std::cout);
  } catch (const dva::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const dva::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dva::InvariantError& e) {
    std::cerr << "internal invariant failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
