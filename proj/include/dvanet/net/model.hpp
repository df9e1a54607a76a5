#pragma once

#include <memory>
#include <vector>

#include "dvanet/net/config.hpp"
#include "dvanet/net/volume_ops.hpp"
#include "dvanet/nn/layers.hpp"

namespace dva {

// Shared feature extractor. The stem downsamples once; the second MBConv
// block downsamples again, so features live at 1/4 resolution from block 1
// onward. The depth branch taps the earliest 1/4-resolution map.
template <typename T>
class Backbone : public nn::Module<T> {
 public:
  Backbone(const ModelConfig& cfg, Rng& rng) {
    const auto& b = cfg.backbone;
    const auto ch = b.block_channels();
    stem1_ = std::make_unique<nn::ConvBn2d<T>>(3, b.base_channels,
                                               b.initial_kernel_sizes[0], 2, rng);
    stem2_ = std::make_unique<nn::ConvBn2d<T>>(b.base_channels, b.base_channels,
                                               b.initial_kernel_sizes[1], 1, rng);
    stem3_ = std::make_unique<nn::ConvBn2d<T>>(b.base_channels, ch[0],
                                               b.initial_kernel_sizes[2], 1, rng);
    this->register_child("stem1", *stem1_);
    this->register_child("stem2", *stem2_);
    this->register_child("stem3", *stem3_);
    int in_ch = ch[0];
    for (int i = 0; i < b.num_mbconv_blocks; ++i) {
      const int stride = i == 1 ? 2 : 1;
      blocks_.push_back(std::make_unique<nn::MBConv<T>>(in_ch, ch[std::size_t(i)],
                                                        stride, rng));
      this->register_child("block" + std::to_string(i), *blocks_.back());
      in_ch = ch[std::size_t(i)];
    }
    tap_index_ = std::min(1, b.num_mbconv_blocks - 1);
    tap_channels_ = ch[std::size_t(tap_index_)];
    head_ = std::make_unique<nn::Conv2d<T>>(ch.back(), b.feature_channels, 3, 1, 1,
                                            rng, 1, /*bias=*/true);
    this->register_child("head", *head_);
  }

  struct Output {
    nn::Var<T> features;  // [N, feature_channels, H/4, W/4]
    nn::Var<T> low;       // tap for the depth branch, [N, tap_channels, H/4, W/4]
  };

  Output forward(const nn::Var<T>& images) {
    const auto& s = images.value().shape();
    if (s.size() != 4 || s[1] != 3)
      throw InvariantError("backbone: expected [N,3,H,W] input");
    if (s[2] % 4 != 0 || s[3] % 4 != 0)
      throw DataError("backbone: input height/width must be divisible by 4");
    auto x = stem3_->forward(stem2_->forward(stem1_->forward(images)));
    nn::Var<T> low;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = blocks_[i]->forward(x);
      if (int(i) == tap_index_) low = x;
    }
    return {head_->forward(x), low};
  }

  // Both views through the same weights in one batch so normalization
  // statistics match between left and right.
  struct StereoFeatures {
    nn::Var<T> left, right, low_left;
  };
  StereoFeatures extract(const nn::Var<T>& left, const nn::Var<T>& right) {
    if (!left.value().same_shape(right.value()))
      throw InvariantError("backbone: stereo pair shape mismatch");
    const int n = left.value().shape()[0];
    auto out = forward(nn::concat_batch(left, right));
    return {nn::slice_batch(out.features, 0, n), nn::slice_batch(out.features, n, n),
            nn::slice_batch(out.low, 0, n)};
  }

  int tap_channels() const { return tap_channels_; }

 private:
  std::unique_ptr<nn::ConvBn2d<T>> stem1_, stem2_, stem3_;
  std::vector<std::unique_ptr<nn::MBConv<T>>> blocks_;
  std::unique_ptr<nn::Conv2d<T>> head_;
  int tap_index_ = 0;
  int tap_channels_ = 0;
};

// Three cascaded MBConv blocks at constant resolution; output channel count
// equals the depth-volume channels regardless of backbone width.
template <typename T>
class DepthBranch : public nn::Module<T> {
 public:
  DepthBranch(int in_channels, int att_channels, Rng& rng)
      : b1_(in_channels, in_channels, 1, rng),
        b2_(in_channels, in_channels, 1, rng),
        b3_(in_channels, att_channels, 1, rng) {
    this->register_child("b1", b1_);
    this->register_child("b2", b2_);
    this->register_child("b3", b3_);
  }

  nn::Var<T> forward(const nn::Var<T>& low) {
    return b3_.forward(b2_.forward(b1_.forward(low)));
  }

 private:
  nn::MBConv<T> b1_, b2_, b3_;
};

// Main aggregation: two conv blocks, an hourglass, two conv blocks.
template <typename T>
class VolumeAggregator : public nn::Module<T> {
 public:
  VolumeAggregator(int channels, int mid1, int mid2, Rng& rng)
      : pre1_(channels, channels, 3, 1, rng),
        pre2_(channels, channels, 3, 1, rng),
        hg_(channels, mid1, mid2, rng),
        post1_(channels, channels, 3, 1, rng),
        post2_(channels, channels, 3, 1, rng) {
    this->register_child("pre1", pre1_);
    this->register_child("pre2", pre2_);
    this->register_child("hg", hg_);
    this->register_child("post1", post1_);
    this->register_child("post2", post2_);
  }

  nn::Var<T> forward(const nn::Var<T>& vol) {
    check_divisible(vol);
    return post2_.forward(post1_.forward(hg_.forward(pre2_.forward(pre1_.forward(vol)))));
  }

  static void check_divisible(const nn::Var<T>& vol) {
    const auto& s = vol.value().shape();
    if (s.size() != 5) throw InvariantError("aggregate: rank");
    if (s[2] % 4 != 0 || s[3] % 4 != 0 || s[4] % 4 != 0)
      throw DataError("aggregate: volume dims must be divisible by 4 for the hourglass");
  }

 private:
  nn::ConvBn3d<T> pre1_, pre2_;
  nn::Hourglass3d<T> hg_;
  nn::ConvBn3d<T> post1_, post2_;
};

// Disparity-attention branch: four 3D convolutions, one hourglass, then a
// single-channel projection producing the prior logits.
template <typename T>
class DisparityAttentionHead : public nn::Module<T> {
 public:
  DisparityAttentionHead(int channels, int mid1, int mid2, Rng& rng)
      : c1_(channels, channels, 3, 1, rng),
        c2_(channels, channels, 3, 1, rng),
        c3_(channels, channels, 3, 1, rng),
        c4_(channels, channels, 3, 1, rng),
        hg_(channels, mid1, mid2, rng),
        proj_(channels, 1, 3, 1, 1, rng, /*bias=*/true) {
    this->register_child("c1", c1_);
    this->register_child("c2", c2_);
    this->register_child("c3", c3_);
    this->register_child("c4", c4_);
    this->register_child("hg", hg_);
    this->register_child("proj", proj_);
  }

  nn::Var<T> forward(const nn::Var<T>& c_agg) {
    auto x = c4_.forward(c3_.forward(c2_.forward(c1_.forward(c_agg))));
    return proj_.forward(hg_.forward(x));
  }

 private:
  nn::ConvBn3d<T> c1_, c2_, c3_, c4_;
  nn::Hourglass3d<T> hg_;
  nn::Conv3d<T> proj_;
};

// Post-attention reduction to the output probability volume.
template <typename T>
class CostHead : public nn::Module<T> {
 public:
  CostHead(int channels, int mid1, int mid2, Rng& rng)
      : c1_(channels, channels, 3, 1, rng),
        c2_(channels, channels, 3, 1, rng),
        hg_(channels, mid1, mid2, rng),
        proj_(channels, 1, 3, 1, 1, rng, /*bias=*/true) {
    this->register_child("c1", c1_);
    this->register_child("c2", c2_);
    this->register_child("hg", hg_);
    this->register_child("proj", proj_);
  }

  nn::Var<T> forward(const nn::Var<T>& c_tda) {
    return proj_.forward(hg_.forward(c2_.forward(c1_.forward(c_tda))));
  }

 private:
  nn::ConvBn3d<T> c1_, c2_;
  nn::Hourglass3d<T> hg_;
  nn::Conv3d<T> proj_;
};

template <typename T>
struct DvaNetOutputs {
  nn::Var<T> d1;                   // final disparity, [N,1,H,W], pixels
  nn::Var<T> d0;                   // prior disparity from the attention branch
  nn::Var<T> norm_depth;           // depth-branch prediction in [0,1], [N,1,H,W]
  nn::Var<T> channel_attention;    // A_c, [N,att,H/4,W/4]
  nn::Var<T> disparity_attention;  // A_d, [N,1,D/4,H/4,W/4]
};

template <typename T>
class DvaNet : public nn::Module<T> {
 public:
  explicit DvaNet(const ModelConfig& cfg, std::uint64_t seed = 0x5eed)
      : cfg_(validated(cfg)), rng_(seed) {
    backbone_ = std::make_unique<Backbone<T>>(cfg_, rng_);
    depth_branch_ = std::make_unique<DepthBranch<T>>(backbone_->tap_channels(),
                                                     cfg_.att_channels, rng_);
    aggregator_ = std::make_unique<VolumeAggregator<T>>(cfg_.att_channels, cfg_.hg_mid1,
                                                        cfg_.hg_mid2, rng_);
    disp_head_ = std::make_unique<DisparityAttentionHead<T>>(
        cfg_.att_channels, cfg_.hg_mid1, cfg_.hg_mid2, rng_);
    cost_head_ = std::make_unique<CostHead<T>>(cfg_.att_channels, cfg_.hg_mid1,
                                               cfg_.hg_mid2, rng_);
    this->register_child("backbone", *backbone_);
    this->register_child("depth_branch", *depth_branch_);
    this->register_child("aggregate", *aggregator_);
    this->register_child("disp_head", *disp_head_);
    this->register_child("cost_head", *cost_head_);
  }

  const ModelConfig& config() const { return cfg_; }

  DvaNetOutputs<T> forward(const nn::Var<T>& left, const nn::Var<T>& right) {
    auto feats = backbone_->extract(left, right);
    auto f_att = depth_branch_->forward(feats.low_left);
    auto norm_depth = regress_depth(f_att);

    const int dq = cfg_.max_disparity / 4;
    nn::Var<T> volume;
    if (cfg_.volume_kind == VolumeKind::discrepancy) {
      volume = group_reduce(build_discrepancy_volume(feats.left, feats.right, dq),
                            cfg_.att_channels);
    } else {
      volume = build_correlation_volume(feats.left, feats.right, dq, cfg_.att_channels);
    }
    auto a_c = hierarchy_attention_weights(f_att);
    auto filtered = nn::mul_channel_gate(a_c, volume);

    auto c_agg = aggregator_->forward(filtered);

    auto prior_logits = disp_head_->forward(c_agg);
    auto a_d = nn::softmax(prior_logits, 2);
    auto d0 = regress_disparity(prior_logits, cfg_.max_disparity);

    auto c_tda = apply_disparity_attention(c_agg, a_d);
    auto final_logits = cost_head_->forward(c_tda);
    auto d1 = regress_disparity(final_logits, cfg_.max_disparity);

    return {d1, d0, norm_depth, a_c, a_d};
  }

 private:
  static const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
  }

  ModelConfig cfg_;
  Rng rng_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::unique_ptr<DepthBranch<T>> depth_branch_;
  std::unique_ptr<VolumeAggregator<T>> aggregator_;
  std::unique_ptr<DisparityAttentionHead<T>> disp_head_;
  std::unique_ptr<CostHead<T>> cost_head_;
};

}  // namespace dva
