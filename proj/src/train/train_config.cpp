#include "dvanet/train/config.hpp"

#include <fstream>
#include <sstream>

#include "dvanet/core/errors.hpp"

namespace dva {

void TrainConfig::validate() const {
  model.validate();
  if (width < 16 || height < 16 || width % 4 != 0 || height % 4 != 0)
    throw DataError("train config: width/height must be >= 16 and divisible by 4");
  if (model.max_disparity >= width / 2)
    throw DataError("train config: max_disparity must be below width/2");
  if (steps < 1) throw DataError("train config: steps must be >= 1");
  if (stop_after < 0 || stop_after > steps)
    throw DataError("train config: stop_after out of range");
  if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  if (num_scenes < 1) throw DataError("train config: num_scenes must be >= 1");
  if (!(max_lr > 0.0)) throw DataError("train config: max_lr must be positive");
  if (!(ema_decay > 0.0 && ema_decay < 1.0))
    throw DataError("train config: ema_decay must be in (0,1)");
  if (!(d_min > 0.0)) throw DataError("train config: d_min must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"width", width},
          {"height", height},
          {"num_scenes", num_scenes},
          {"d_min", d_min},
          {"textureless_band", textureless_band},
          {"steps", steps},
          {"stop_after", stop_after},
          {"batch_size", batch_size},
          {"max_lr", max_lr},
          {"weight_decay", weight_decay},
          {"ema_decay", ema_decay},
          {"seed", seed},
          {"deterministic", deterministic},
          {"eval_every", eval_every},
          {"out_dir", out_dir}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.model = ModelConfig::from_json(j.at("model"));
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.num_scenes = j.at("num_scenes").get<int>();
  c.d_min = j.at("d_min").get<double>();
  c.textureless_band = j.value("textureless_band", true);
  c.steps = j.at("steps").get<int>();
  c.stop_after = j.value("stop_after", 0);
  c.batch_size = j.at("batch_size").get<int>();
  c.max_lr = j.at("max_lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.deterministic = j.value("deterministic", true);
  c.eval_every = j.at("eval_every").get<int>();
  c.out_dir = j.value("out_dir", "");
  c.validate();
  return c;
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("train config: line " + std::to_string(line_no) +
                      ": expected key=value");
    auto trim = [](std::string s) {
      const auto b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      const auto e2 = s.find_last_not_of(" \t");
      return s.substr(b2, e2 - b2 + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        if (val == "toy")
          c.model = ModelConfig::toy();
        else if (val == "full")
          c.model = ModelConfig::full_size();
        else if (val == "micro")
          c.model = ModelConfig::micro();
        else
          throw DataError("unknown preset " + val);
      } else if (key == "width")
        c.width = std::stoi(val);
      else if (key == "height")
        c.height = std::stoi(val);
      else if (key == "num_scenes")
        c.num_scenes = std::stoi(val);
      else if (key == "d_min")
        c.d_min = std::stod(val);
      else if (key == "textureless_band")
        c.textureless_band = std::stoi(val) != 0;
      else if (key == "steps")
        c.steps = std::stoi(val);
      else if (key == "stop_after")
        c.stop_after = std::stoi(val);
      else if (key == "batch_size")
        c.batch_size = std::stoi(val);
      else if (key == "max_lr")
        c.max_lr = std::stod(val);
      else if (key == "weight_decay")
        c.weight_decay = std::stod(val);
      else if (key == "ema_decay")
        c.ema_decay = std::stod(val);
      else if (key == "seed")
        c.seed = std::stoull(val);
      else if (key == "deterministic")
        c.deterministic = std::stoi(val) != 0;
      else if (key == "eval_every")
        c.eval_every = std::stoi(val);
      else if (key == "out")
        c.out_dir = val;
      else if (key == "d_max")
        c.model.max_disparity = std::stoi(val);
      else if (key == "base_channels")
        c.model.backbone.base_channels = std::stoi(val);
      else if (key == "feature_channels")
        c.model.backbone.feature_channels = std::stoi(val);
      else if (key == "att_channels")
        c.model.att_channels = std::stoi(val);
      else if (key == "hg_mid1")
        c.model.hg_mid1 = std::stoi(val);
      else if (key == "hg_mid2")
        c.model.hg_mid2 = std::stoi(val);
      else if (key == "volume")
        c.model.volume_kind = volume_kind_from_string(val);
      else
        throw DataError("unknown key " + key);
    } catch (const std::invalid_argument&) {
      throw DataError("train config: line " + std::to_string(line_no) +
                      ": bad value for " + key);
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("train config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

}  // namespace dva
