#pragma once

#include "dvanet/nn/functional.hpp"

// Cost-volume stage operations shared by the network and its tests.

namespace dva {

// C(., d, x, y) = F_l(x, y) - F_r(x - d, y); out-of-frame shifts zero-filled.
template <typename T>
nn::Var<T> build_discrepancy_volume(const nn::Var<T>& f_left,
                                    const nn::Var<T>& f_right, int max_disp_q) {
  return nn::discrepancy_volume(f_left, f_right, max_disp_q);
}

// Group-wise correlation alternative for the volume-construction ablation.
template <typename T>
nn::Var<T> build_correlation_volume(const nn::Var<T>& f_left,
                                    const nn::Var<T>& f_right, int max_disp_q,
                                    int groups) {
  return nn::correlation_volume(f_left, f_right, max_disp_q, groups);
}

// Contiguous channel groups averaged down to `groups` output channels.
template <typename T>
nn::Var<T> group_reduce(const nn::Var<T>& volume, int groups) {
  return nn::group_average(volume, groups);
}

// Sigmoid channel gate from the depth branch, broadcast over disparities.
template <typename T>
nn::Var<T> hierarchy_attention_weights(const nn::Var<T>& f_att) {
  return nn::sigmoid(f_att);
}

template <typename T>
nn::Var<T> apply_hierarchy_attention(const nn::Var<T>& volume,
                                     const nn::Var<T>& f_att) {
  return nn::mul_channel_gate(hierarchy_attention_weights(f_att), volume);
}

// Disparity probability gate, broadcast over channels.
template <typename T>
nn::Var<T> apply_disparity_attention(const nn::Var<T>& volume, const nn::Var<T>& a_d) {
  return nn::mul_disp_gate(a_d, volume);
}

// Softmax + expectation over the disparity axis of a full-resolution
// single-channel volume [N,1,D,H,W] -> [N,1,H,W].
template <typename T>
nn::Var<T> soft_argmin(const nn::Var<T>& logits_full) {
  const auto& s = logits_full.value().shape();
  if (s.size() != 5 || s[1] != 1)
    throw InvariantError("soft_argmin: expected single-channel volume");
  const int d_levels = s[2];
  std::vector<T> weights(std::size_t(d_levels), T(0));
  for (int d = 0; d < d_levels; ++d) weights[std::size_t(d)] = T(d);
  auto probs = nn::softmax(logits_full, 2);
  auto e = nn::index_expectation(probs, 2, weights);  // [N,1,1,H,W]
  const auto& es = e.value().shape();
  nn::Tensor<T> out({es[0], 1, es[3], es[4]});
  std::copy(e.value().data(), e.value().data() + e.value().size(), out.data());
  nn::Node<T>* en = e.node().get();
  return nn::make_op<T>(std::move(out), {e}, [en](nn::Node<T>& self) {
    if (!en->requires_grad) return;
    T* g = en->ensure_grad().data();
    const T* gs = self.grad.data();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) g[i] += gs[i];
  });
}

// Quarter-resolution logits [N,1,d_max/4,H/4,W/4]: trilinear interpolation
// (x4 on the disparity and both spatial axes, so index i means i pixels),
// then softmax and soft argmin. Interpolation happens on logits, before the
// softmax.
template <typename T>
nn::Var<T> regress_disparity(const nn::Var<T>& logits_quarter, int max_disparity) {
  const auto& s = logits_quarter.value().shape();
  if (s.size() != 5 || s[1] != 1)
    throw InvariantError("regress_disparity: expected single-channel volume");
  if (max_disparity % 4 != 0)
    throw InvariantError("regress_disparity: max disparity must be divisible by 4");
  if (s[2] * 4 != max_disparity)
    throw InvariantError("regress_disparity: volume disparity levels mismatch");
  return soft_argmin(
      nn::upsample_trilinear3d(logits_quarter, 4, /*zero_tail_depth=*/true));
}

// Depth volume regression: interpolate the attention features to full
// resolution, softmax over channels, expectation of the relative depth index
// c/(C-1). Output in [0, 1], shape [N,1,H,W].
template <typename T>
nn::Var<T> regress_depth(const nn::Var<T>& f_att) {
  const auto& s = f_att.value().shape();
  if (s.size() != 4) throw InvariantError("regress_depth: rank");
  const int C = s[1];
  if (C < 2) throw InvariantError("regress_depth: needs at least 2 channels");
  std::vector<T> weights(std::size_t(C), T(0));
  for (int c = 0; c < C; ++c) weights[std::size_t(c)] = T(c) / T(C - 1);
  auto full = nn::upsample_bilinear2d(f_att, 4);
  auto probs = nn::softmax(full, 1);
  return nn::index_expectation(probs, 1, weights);  // [N,1,H,W]
}

}  // namespace dva
