#pragma once

#include <array>
#include <string>
#include <vector>

#include "dvanet/core/errors.hpp"
#include "json.hpp"

namespace dva {

struct BackboneConfig {
  int base_channels = 32;                            // stem width
  std::array<int, 3> initial_kernel_sizes = {9, 7, 5};
  int num_mbconv_blocks = 4;
  int feature_channels = 128;                        // F_l / F_r width
  int downsample_factor = 4;                         // fixed by the volume layout

  // Stage widths ramp from 3/8 of the feature width up to the full width;
  // at the default four blocks this is 48/72/96/128.
  std::vector<int> block_channels() const;
  bool operator==(const BackboneConfig&) const = default;
};

enum class VolumeKind { discrepancy, correlation };

std::string to_string(VolumeKind k);
VolumeKind volume_kind_from_string(const std::string& s);

struct ModelConfig {
  BackboneConfig backbone;
  int max_disparity = 192;   // full-resolution disparity range, divisible by 4
  int att_channels = 32;     // depth-volume channels; equals volume channels
  int hg_mid1 = 72;          // hourglass encoder widths, sized for the
  int hg_mid2 = 144;         // published parameter budget
  VolumeKind volume_kind = VolumeKind::discrepancy;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  static ModelConfig full_size();  // the published network scale
  static ModelConfig toy();        // desk-scale training
  static ModelConfig micro();      // gradient-check scale

  bool operator==(const ModelConfig&) const = default;
};

inline std::vector<int> BackboneConfig::block_channels() const {
  const int n = num_mbconv_blocks;
  std::vector<int> out;
  out.reserve(std::size_t(n));
  auto round4 = [](double v) { return std::max(4, int((v + 2.0) / 4.0) * 4); };
  if (n == 4) {
    const std::array<double, 4> frac = {0.375, 0.5625, 0.75, 1.0};
    for (double f : frac) out.push_back(round4(f * feature_channels));
    out.back() = feature_channels;
    return out;
  }
  for (int i = 0; i < n; ++i) {
    const double t = n > 1 ? double(i) / double(n - 1) : 1.0;
    out.push_back(round4((0.375 + 0.625 * t) * feature_channels));
  }
  out.back() = feature_channels;
  return out;
}

inline std::string to_string(VolumeKind k) {
  return k == VolumeKind::discrepancy ? "discrepancy" : "correlation";
}

inline VolumeKind volume_kind_from_string(const std::string& s) {
  if (s == "discrepancy") return VolumeKind::discrepancy;
  if (s == "correlation") return VolumeKind::correlation;
  throw DataError("config: unknown volume kind: " + s);
}

inline void ModelConfig::validate() const {
  if (max_disparity < 4 || max_disparity % 4 != 0)
    throw DataError("config: max_disparity must be a positive multiple of 4");
  if (att_channels < 2) throw DataError("config: att_channels must be >= 2");
  if (backbone.feature_channels % att_channels != 0)
    throw DataError("config: feature channels not divisible by att channels");
  for (int k : backbone.initial_kernel_sizes)
    if (k < 1 || k % 2 == 0) throw DataError("config: initial kernel sizes must be odd");
  if (backbone.num_mbconv_blocks < 2)
    throw DataError("config: need at least two backbone blocks");
  if (backbone.downsample_factor != 4)
    throw DataError("config: downsample factor is fixed at 4");
  if (hg_mid1 < 1 || hg_mid2 < 1) throw DataError("config: hourglass widths");
}

inline nlohmann::json ModelConfig::to_json() const {
  return {
      {"backbone",
       {{"base_channels", backbone.base_channels},
        {"initial_kernel_sizes",
         {backbone.initial_kernel_sizes[0], backbone.initial_kernel_sizes[1],
          backbone.initial_kernel_sizes[2]}},
        {"num_mbconv_blocks", backbone.num_mbconv_blocks},
        {"feature_channels", backbone.feature_channels},
        {"downsample_factor", backbone.downsample_factor}}},
      {"max_disparity", max_disparity},
      {"att_channels", att_channels},
      {"hg_mid1", hg_mid1},
      {"hg_mid2", hg_mid2},
      {"volume_kind", to_string(volume_kind)},
  };
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& b = j.at("backbone");
  c.backbone.base_channels = b.at("base_channels").get<int>();
  const auto& ks = b.at("initial_kernel_sizes");
  c.backbone.initial_kernel_sizes = {ks.at(0).get<int>(), ks.at(1).get<int>(),
                                     ks.at(2).get<int>()};
  c.backbone.num_mbconv_blocks = b.at("num_mbconv_blocks").get<int>();
  c.backbone.feature_channels = b.at("feature_channels").get<int>();
  c.backbone.downsample_factor = b.at("downsample_factor").get<int>();
  c.max_disparity = j.at("max_disparity").get<int>();
  c.att_channels = j.at("att_channels").get<int>();
  c.hg_mid1 = j.at("hg_mid1").get<int>();
  c.hg_mid2 = j.at("hg_mid2").get<int>();
  c.volume_kind = volume_kind_from_string(j.at("volume_kind").get<std::string>());
  c.validate();
  return c;
}

inline ModelConfig ModelConfig::full_size() { return ModelConfig{}; }

inline ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.backbone.base_channels = 8;
  c.backbone.feature_channels = 32;
  c.max_disparity = 16;
  c.att_channels = 16;
  c.hg_mid1 = 24;
  c.hg_mid2 = 32;
  return c;
}

inline ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.backbone.base_channels = 4;
  c.backbone.feature_channels = 8;
  c.max_disparity = 16;
  c.att_channels = 8;
  c.hg_mid1 = 8;
  c.hg_mid2 = 8;
  return c;
}

}  // namespace dva
