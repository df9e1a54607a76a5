#pragma once

#include "dvanet/core/grid.hpp"
#include "dvanet/io/image.hpp"
#include "dvanet/nn/tensor.hpp"

// Conversions between the map/image types of the evaluation side and the
// tensors the network consumes.

namespace dva {

template <typename T>
nn::Tensor<T> image_batch_to_tensor(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw DataError("bridge: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  nn::Tensor<T> t({int(images.size()), 3, h, w});
  T* p = t.data();
  for (const auto* img : images) {
    if (img->height != h || img->width != w)
      throw DataError("bridge: mixed image sizes in batch");
    for (const float v : img->data) *p++ = T(v);
  }
  return t;
}

template <typename T>
nn::Tensor<T> image_to_tensor(const RgbImage& image) {
  return image_batch_to_tensor<T>({&image});
}

// [N,1,H,W] (or [N,H,W]) prediction slice -> dense all-valid map.
template <typename T>
DisparityMap tensor_to_disparity(const nn::Tensor<T>& t, int batch_index) {
  const auto& s = t.shape();
  int h, w;
  if (s.size() == 4 && s[1] == 1) {
    h = s[2];
    w = s[3];
  } else if (s.size() == 3) {
    h = s[1];
    w = s[2];
  } else {
    throw InvariantError("bridge: expected [N,1,H,W] prediction");
  }
  DisparityMap d(h, w);
  const T* p = t.data() + std::int64_t(batch_index) * h * w;
  for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = double(p[i]);
  return d;
}

template <typename T>
NormalizedDepthMap tensor_to_normalized_depth(const nn::Tensor<T>& t, int batch_index) {
  const auto d = tensor_to_disparity(t, batch_index);
  NormalizedDepthMap out(d.height, d.width);
  out.values = d.values;
  return out;
}

// Target plus 0/1 mask tensors for the masked losses; entries beyond the
// usable disparity range are masked out.
template <typename T>
struct MaskedTarget {
  nn::Tensor<T> values;
  nn::Tensor<T> mask;
};

template <typename T>
MaskedTarget<T> disparity_target(const std::vector<const DisparityMap*>& maps,
                                 double max_disparity) {
  if (maps.empty()) throw DataError("bridge: empty batch");
  const int h = maps[0]->height, w = maps[0]->width;
  MaskedTarget<T> out;
  out.values = nn::Tensor<T>({int(maps.size()), 1, h, w});
  out.mask = nn::Tensor<T>({int(maps.size()), 1, h, w});
  std::int64_t k = 0;
  for (const auto* m : maps) {
    if (m->height != h || m->width != w) throw DataError("bridge: mixed map sizes");
    for (std::size_t i = 0; i < m->size(); ++i, ++k) {
      const bool usable = m->valid[i] && m->values[i] < max_disparity;
      out.values[k] = usable ? T(m->values[i]) : T(0);
      out.mask[k] = usable ? T(1) : T(0);
    }
  }
  return out;
}

template <typename T>
MaskedTarget<T> normalized_depth_target(const std::vector<const NormalizedDepthMap*>& maps) {
  if (maps.empty()) throw DataError("bridge: empty batch");
  const int h = maps[0]->height, w = maps[0]->width;
  MaskedTarget<T> out;
  out.values = nn::Tensor<T>({int(maps.size()), 1, h, w});
  out.mask = nn::Tensor<T>({int(maps.size()), 1, h, w});
  std::int64_t k = 0;
  for (const auto* m : maps) {
    if (m->height != h || m->width != w) throw DataError("bridge: mixed map sizes");
    for (std::size_t i = 0; i < m->size(); ++i, ++k) {
      out.values[k] = m->valid[i] ? T(m->values[i]) : T(0);
      out.mask[k] = m->valid[i] ? T(1) : T(0);
    }
  }
  return out;
}

}  // namespace dva
