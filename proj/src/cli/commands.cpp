#include "dvanet/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "dvanet/core/errors.hpp"
#include "dvanet/core/parallel.hpp"
#include "dvanet/io/image.hpp"
#include "dvanet/io/pfm.hpp"
#include "dvanet/io/ply.hpp"
#include "dvanet/io/png16.hpp"
#include "dvanet/net/bridge.hpp"
#include "dvanet/net/checkpoint.hpp"
#include "dvanet/net/model.hpp"
#include "dvanet/train/trainer.hpp"

namespace fs = std::filesystem;

namespace dva::cli {

namespace {

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

DisparityMap read_disparity_auto(const std::string& path, const std::string& format,
                                 double depth_scale_mm, const StereoCalibration& calib) {
  std::string fmt = format;
  if (fmt == "auto")
    fmt = path.size() >= 4 && path.substr(path.size() - 4) == ".pfm" ? "pfm" : "kitti";
  if (fmt == "pfm") return disparity_from_pfm(read_pfm(path));
  if (fmt == "kitti") return read_kitti_disparity(path);
  if (fmt == "depth")
    return depth_to_disparity(read_depth_png(path, depth_scale_mm), calib);
  throw UsageError("unknown disparity format: " + fmt);
}

std::map<std::string, fs::path> stems_of(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::map<std::string, fs::path> out;  // case-sensitive stem matching
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".pfm" && ext != ".png") continue;
    out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

nlohmann::json calib_json(const StereoCalibration& c) {
  nlohmann::json j{{"focal_px", c.focal_length_px}, {"baseline_m", c.baseline_m}};
  if (c.principal_point) {
    j["cx"] = c.principal_point->first;
    j["cy"] = c.principal_point->second;
  }
  return j;
}

}  // namespace

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const nlohmann::json& config) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["timestamp"] = timestamp_utc();
  write_text(fs::path(out_dir) / "run_manifest.json", j.dump(2) + "\n");
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& log) {
  args.calib.validate();
  args.wrde.validate();
  const auto preds = stems_of(args.pred_dir);
  const auto gts = stems_of(args.gt_dir);
  if (preds.empty()) throw DataError("no predictions found in " + args.pred_dir);

  std::vector<std::string> unmatched;
  for (const auto& [stem, path] : preds)
    if (!gts.count(stem)) unmatched.push_back("pred without gt: " + stem);
  for (const auto& [stem, path] : gts)
    if (!preds.count(stem)) unmatched.push_back("gt without pred: " + stem);
  if (!unmatched.empty()) {
    std::string msg = "unmatched files between directories:";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw DataError(msg);
  }

  std::vector<std::string> stems;
  for (const auto& [stem, path] : preds) stems.push_back(stem);

  // per-image evaluation fans out; the reduction stays input-ordered
  std::vector<PairEvaluation> parts(stems.size());
  std::vector<std::string> errors(stems.size());
  parallel_for(std::int64_t(stems.size()), [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      try {
        const auto& stem = stems[std::size_t(i)];
        const auto pred =
            read_disparity_auto(preds.at(stem).string(), "auto", 1.0, args.calib);
        const auto gt = read_disparity_auto(gts.at(stem).string(), args.gt_format,
                                            args.depth_scale_mm, args.calib);
        parts[std::size_t(i)] = evaluate_pair(pred, gt, args.calib, args.wrde, args.d1);
      } catch (const std::exception& ex) {
        errors[std::size_t(i)] = ex.what();
      }
    }
  });
  for (std::size_t i = 0; i < stems.size(); ++i)
    if (!errors[i].empty())
      throw DataError("evaluating " + stems[i] + ": " + errors[i]);

  fs::create_directories(fs::path(args.out_dir) / "per_image");
  for (std::size_t i = 0; i < stems.size(); ++i) {
    write_text(fs::path(args.out_dir) / "per_image" / (stems[i] + ".json"),
               report_to_json(parts[i].report, args.wrde, stems[i]));
    write_text(fs::path(args.out_dir) / "per_image" / (stems[i] + "_curve.csv"),
               curve_to_csv(parts[i].curve));
  }

  const auto total = aggregate_evaluations(parts, args.wrde);
  write_text(fs::path(args.out_dir) / "aggregate_report.json",
             report_to_json(total.report, args.wrde, "aggregate"));
  write_text(fs::path(args.out_dir) / "curve.csv", curve_to_csv(total.curve));
  write_run_manifest(args.out_dir, "evaluate",
                     {{"pred_dir", args.pred_dir},
                      {"gt_dir", args.gt_dir},
                      {"gt_format", args.gt_format},
                      {"depth_scale_mm", args.depth_scale_mm},
                      {"calib", calib_json(args.calib)},
                      {"wrde",
                       {{"z_min", args.wrde.z_min},
                        {"z_max", args.wrde.z_max},
                        {"interval", args.wrde.interval}}},
                      {"images", stems.size()}});

  char line[256];
  std::snprintf(line, sizeof(line),
                "images %zu  pixels %lld  EPE %.4f px  >1px %.3f%%  >2px %.3f%%  "
                "D1 %.3f%%  WRDE %.4f%%\n",
                stems.size(), (long long)total.report.valid_pixel_count,
                total.report.epe_px, 100.0 * total.report.rate_gt_1px,
                100.0 * total.report.rate_gt_2px, 100.0 * total.report.d1_3px,
                100.0 * total.report.wrde);
  log << line;
  return 0;
}

int cmd_compare(const CompareArgs& args, std::ostream& log) {
  if (args.report_dirs.empty()) throw UsageError("compare: no report directories");
  std::vector<ModelEvaluation> models;
  for (const auto& dir : args.report_dirs) {
    std::ifstream rep(fs::path(dir) / "aggregate_report.json");
    if (!rep) throw DataError("missing aggregate_report.json in " + dir);
    std::string text((std::istreambuf_iterator<char>(rep)),
                     std::istreambuf_iterator<char>());
    auto m = report_from_json(text);
    if (m.name.empty() || m.name == "aggregate")
      m.name = fs::path(dir).filename().string();
    std::ifstream cur(fs::path(dir) / "curve.csv");
    if (!cur) throw DataError("missing curve.csv in " + dir);
    std::string ctext((std::istreambuf_iterator<char>(cur)),
                      std::istreambuf_iterator<char>());
    m.curve = curve_from_csv(ctext);
    models.push_back(std::move(m));
  }
  auto table = compare_models(std::move(models));
  log << table.render_text();
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_text(fs::path(args.out_dir) / "comparison.txt", table.render_text());
    write_text(fs::path(args.out_dir) / "comparison.csv", table.render_csv());
    write_text(fs::path(args.out_dir) / "curves.csv", table.render_curves_csv());
    write_run_manifest(args.out_dir, "compare",
                       {{"report_dirs", args.report_dirs}});
  }
  return 0;
}

namespace {

void dump_attention_maps(const DvaNetOutputs<float>& out, const fs::path& dir,
                         const std::string& stem) {
  // A_c rendered as the arg-max channel index (texture hierarchy map)
  const auto& ac = out.channel_attention.value();
  const int C = ac.shape()[1], h = ac.shape()[2], w = ac.shape()[3];
  std::vector<std::uint16_t> px(std::size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      float top = ac[(0 * h + y) * w + x];
      for (int c = 1; c < C; ++c)
        if (ac[(c * h + y) * w + x] > top) {
          top = ac[(c * h + y) * w + x];
          best = c;
        }
      px[std::size_t(y) * w + x] =
          std::uint16_t(std::lround(65535.0 * best / double(C - 1)));
    }
  write_png_gray16((dir / (stem + "_att_channel.png")).string(), w, h, px);

  // A_d rendered as normalized entropy over disparities
  const auto& ad = out.disparity_attention.value();
  const int D = ad.shape()[2], hq = ad.shape()[3], wq = ad.shape()[4];
  std::vector<std::uint16_t> ent(std::size_t(hq) * wq);
  const double norm = std::log(double(D));
  for (int y = 0; y < hq; ++y)
    for (int x = 0; x < wq; ++x) {
      double e = 0.0;
      for (int d = 0; d < D; ++d) {
        const double p = std::max(1e-12, double(ad[(d * hq + y) * wq + x]));
        e -= p * std::log(p);
      }
      ent[std::size_t(y) * wq + x] =
          std::uint16_t(std::lround(65535.0 * std::clamp(e / norm, 0.0, 1.0)));
    }
  write_png_gray16((dir / (stem + "_att_disparity.png")).string(), wq, hq, ent);
}

}  // namespace

int cmd_infer(const InferArgs& args, std::ostream& log) {
  if (args.pairs.empty()) throw UsageError("infer: no image pairs given");
  if (args.export_ply && !args.calib)
    throw UsageError("infer: --ply requires calibration");

  const auto config = read_checkpoint_config(args.checkpoint);
  DvaNet<float> model(config);
  load_checkpoint<float>(args.checkpoint, model);
  model.set_training(false);

  fs::create_directories(args.out_dir);
  nn::NoGradGuard ng;
  for (const auto& [left_path, right_path] : args.pairs) {
    auto left = read_image(left_path);
    auto right = read_image(right_path);
    if (left.width != right.width || left.height != right.height)
      throw DataError("infer: stereo pair sizes differ for " + left_path);
    const auto pre_l =
        preprocess_to_multiple(left, 4, args.resize_width, args.resize_height);
    const auto pre_r =
        preprocess_to_multiple(right, 4, args.resize_width, args.resize_height);

    nn::Var<float> lv(image_to_tensor<float>(pre_l.image));
    nn::Var<float> rv(image_to_tensor<float>(pre_r.image));
    auto out = model.forward(lv, rv);
    auto disp = tensor_to_disparity(out.d1.value(), 0);

    const std::string stem = fs::path(left_path).stem().string();
    if (args.format == "pfm") {
      write_pfm((fs::path(args.out_dir) / (stem + "_disp.pfm")).string(),
                pfm_from_disparity(disp));
    } else if (args.format == "png") {
      write_kitti_disparity((fs::path(args.out_dir) / (stem + "_disp.png")).string(),
                            disp);
    } else {
      throw UsageError("infer: unknown output format " + args.format);
    }
    if (args.dump_attention) {
      // kept out of the prediction directory so stem matching during
      // evaluation only sees disparity maps
      const auto att_dir = fs::path(args.out_dir) / "attention";
      fs::create_directories(att_dir);
      dump_attention_maps(out, att_dir, stem);
    }
    if (args.export_ply) {
      const auto points = disparity_to_pointcloud(disp, *args.calib);
      write_ply(points, (fs::path(args.out_dir) / (stem + ".ply")).string());
    }
    log << stem << ": " << disp.width << "x" << disp.height << " disparity written\n";
  }

  nlohmann::json cfg{{"checkpoint", args.checkpoint},
                     {"format", args.format},
                     {"dump_attention", args.dump_attention},
                     {"export_ply", args.export_ply},
                     {"pairs", args.pairs.size()},
                     {"model_config", config.to_json()}};
  if (args.calib) cfg["calib"] = calib_json(*args.calib);
  write_run_manifest(args.out_dir, "infer", cfg);
  return 0;
}

int cmd_train_toy(const TrainToyArgs& args, std::ostream& log) {
  auto cfg = args.config;
  cfg.validate();
  if (cfg.out_dir.empty()) throw UsageError("train-toy: --out is required");
  write_run_manifest(cfg.out_dir, "train-toy", cfg.to_json());

  Trainer<float> trainer(cfg);
  const auto result = trainer.run();
  char line[256];
  std::snprintf(line, sizeof(line),
                "trained %d steps  train EPE %.4f px  >1px %.3f%%  depth MAE %.4f\n",
                result.next_step, result.train_eval.epe,
                100.0 * result.train_eval.rate_gt_1px, result.train_eval.depth_mae);
  log << line;
  std::snprintf(line, sizeof(line), "held-out EPE %.4f px  checkpoint %s\n",
                result.held_out_eval.epe, result.checkpoint_path.c_str());
  log << line;
  return 0;
}

int cmd_export_pointcloud(const ExportPointcloudArgs& args, std::ostream& log) {
  args.calib.validate();
  const auto disp =
      read_disparity_auto(args.disparity_path, args.format, 1.0, args.calib);
  const auto points = disparity_to_pointcloud(disp, args.calib);
  write_ply(points, args.out_path);
  log << "wrote " << points.size() << " points to " << args.out_path << "\n";
  return 0;
}

int cmd_selftest(std::ostream& log) {
  const int failures = run_selftest(log);
  if (failures != 0) {
    log << failures << " selftest check(s) failed\n";
    return 3;
  }
  log << "all selftest checks passed\n";
  return 0;
}

}  // namespace dva::cli
