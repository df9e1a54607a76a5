#pragma once

#include <cmath>

#include "dvanet/nn/functional.hpp"
#include "dvanet/nn/module.hpp"

namespace dva::nn {

// Kaiming-uniform bound for fan_in inputs per output.
template <typename T>
Tensor<T> kaiming_uniform(std::vector<int> shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / double(fan_in));
  t.fill_uniform(rng, T(-bound), T(bound));
  return t;
}

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng,
         int groups = 1, bool bias = true)
      : stride_(stride), pad_(pad), groups_(groups) {
    const std::int64_t fan_in = std::int64_t(in_ch / groups) * kernel * kernel;
    w_ = &this->register_param(
        "w", kaiming_uniform<T>({out_ch, in_ch / groups, kernel, kernel}, fan_in, rng));
    if (bias) b_ = &this->register_param("b", Tensor<T>({out_ch}));
  }

  Var<T> forward(const Var<T>& x) {
    return conv2d(x, *w_, b_ ? *b_ : Var<T>{}, stride_, pad_, groups_);
  }

 private:
  int stride_, pad_, groups_;
  Var<T>* w_ = nullptr;
  Var<T>* b_ = nullptr;
};

template <typename T>
class Conv3d : public Module<T> {
 public:
  Conv3d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng,
         bool bias = true)
      : stride_(stride), pad_(pad) {
    const std::int64_t fan_in = std::int64_t(in_ch) * kernel * kernel * kernel;
    w_ = &this->register_param(
        "w",
        kaiming_uniform<T>({out_ch, in_ch, kernel, kernel, kernel}, fan_in, rng));
    if (bias) b_ = &this->register_param("b", Tensor<T>({out_ch}));
  }

  Var<T> forward(const Var<T>& x) {
    return conv3d(x, *w_, b_ ? *b_ : Var<T>{}, stride_, pad_);
  }

 private:
  int stride_, pad_;
  Var<T>* w_ = nullptr;
  Var<T>* b_ = nullptr;
};

template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(int channels) {
    Tensor<T> ones({channels});
    ones.fill(T(1));
    gamma_ = &this->register_param("gamma", std::move(ones));
    beta_ = &this->register_param("beta", Tensor<T>({channels}));
    running_mean_ = &this->register_buffer("running_mean", Tensor<T>({channels}));
    Tensor<T> rv({channels});
    rv.fill(T(1));
    running_var_ = &this->register_buffer("running_var", std::move(rv));
  }

  Var<T> forward(const Var<T>& x) {
    return batch_norm(x, *gamma_, *beta_, running_mean_, running_var_,
                      this->training());
  }

 private:
  Var<T>* gamma_ = nullptr;
  Var<T>* beta_ = nullptr;
  Tensor<T>* running_mean_ = nullptr;
  Tensor<T>* running_var_ = nullptr;
};

enum class Act { none, silu, sigmoid };

template <typename T>
Var<T> apply_act(const Var<T>& x, Act act) {
  switch (act) {
    case Act::none: return x;
    case Act::silu: return silu(x);
    case Act::sigmoid: return sigmoid(x);
  }
  return x;
}

// conv + batch norm + activation, the standard 2D block
template <typename T>
class ConvBn2d : public Module<T> {
 public:
  ConvBn2d(int in_ch, int out_ch, int kernel, int stride, Rng& rng,
           Act act = Act::silu, int groups = 1)
      : conv_(in_ch, out_ch, kernel, stride, kernel / 2, rng, groups,
              /*bias=*/false),
        bn_(out_ch),
        act_(act) {
    this->register_child("conv", conv_);
    this->register_child("bn", bn_);
  }

  Var<T> forward(const Var<T>& x) { return apply_act(bn_.forward(conv_.forward(x)), act_); }

 private:
  Conv2d<T> conv_;
  BatchNorm<T> bn_;
  Act act_;
};

template <typename T>
class ConvBn3d : public Module<T> {
 public:
  ConvBn3d(int in_ch, int out_ch, int kernel, int stride, Rng& rng,
           Act act = Act::silu)
      : conv_(in_ch, out_ch, kernel, stride, kernel / 2, rng, /*bias=*/false),
        bn_(out_ch),
        act_(act) {
    this->register_child("conv", conv_);
    this->register_child("bn", bn_);
  }

  Var<T> forward(const Var<T>& x) { return apply_act(bn_.forward(conv_.forward(x)), act_); }

 private:
  Conv3d<T> conv_;
  BatchNorm<T> bn_;
  Act act_;
};

// Squeeze-and-excitation gate over channels.
template <typename T>
class SqueezeExcite : public Module<T> {
 public:
  SqueezeExcite(int channels, int reduced, Rng& rng)
      : squeeze_(channels, reduced, 1, 1, 0, rng),
        excite_(reduced, channels, 1, 1, 0, rng) {
    this->register_child("squeeze", squeeze_);
    this->register_child("excite", excite_);
  }

  Var<T> forward(const Var<T>& x) {
    auto s = global_avg_pool2d(x);
    s = silu(squeeze_.forward(s));
    s = sigmoid(excite_.forward(s));
    return mul_bcast_hw(s, x);
  }

 private:
  Conv2d<T> squeeze_;
  Conv2d<T> excite_;
};

// Inverted-residual mobile convolution: expand 1x1, depthwise 3x3,
// squeeze-excitation, project 1x1; residual when shapes allow.
template <typename T>
class MBConv : public Module<T> {
 public:
  MBConv(int in_ch, int out_ch, int stride, Rng& rng, int expand = 4)
      : residual_(stride == 1 && in_ch == out_ch),
        expand_(in_ch, in_ch * expand, 1, 1, rng),
        depthwise_(in_ch * expand, in_ch * expand, 3, stride, rng, Act::silu,
                   /*groups=*/in_ch * expand),
        se_(in_ch * expand, std::max(1, in_ch / 4), rng),
        project_(in_ch * expand, out_ch, 1, 1, rng, Act::none) {
    this->register_child("expand", expand_);
    this->register_child("dw", depthwise_);
    this->register_child("se", se_);
    this->register_child("project", project_);
  }

  Var<T> forward(const Var<T>& x) {
    auto h = expand_.forward(x);
    h = depthwise_.forward(h);
    h = se_.forward(h);
    h = project_.forward(h);
    if (residual_) h = add(h, x);
    return h;
  }

 private:
  bool residual_;
  ConvBn2d<T> expand_;
  ConvBn2d<T> depthwise_;
  SqueezeExcite<T> se_;
  ConvBn2d<T> project_;
};

// 3D encoder-decoder: two stride-2 stages down, two trilinear+conv stages up,
// additive skips at matching resolutions.
template <typename T>
class Hourglass3d : public Module<T> {
 public:
  Hourglass3d(int channels, int mid1, int mid2, Rng& rng)
      : down1a_(channels, mid1, 3, 2, rng),
        down1b_(mid1, mid1, 3, 1, rng),
        down2a_(mid1, mid2, 3, 2, rng),
        down2b_(mid2, mid2, 3, 1, rng),
        up1_(mid2, mid1, 3, 1, rng, Act::none),
        up2_(mid1, channels, 3, 1, rng, Act::none) {
    this->register_child("down1a", down1a_);
    this->register_child("down1b", down1b_);
    this->register_child("down2a", down2a_);
    this->register_child("down2b", down2b_);
    this->register_child("up1", up1_);
    this->register_child("up2", up2_);
  }

  Var<T> forward(const Var<T>& x) {
    auto d1 = down1b_.forward(down1a_.forward(x));
    auto d2 = down2b_.forward(down2a_.forward(d1));
    auto u1 = silu(add(up1_.forward(upsample_trilinear3d(d2, 2)), d1));
    auto u2 = silu(add(up2_.forward(upsample_trilinear3d(u1, 2)), x));
    return u2;
  }

 private:
  ConvBn3d<T> down1a_, down1b_, down2a_, down2b_, up1_, up2_;
};

}  // namespace dva::nn
