#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dvanet/nn/autograd.hpp"

// Differentiable ops. Each op computes its output eagerly and, when grad
// recording is on, registers a closure that scatters the output gradient
// into its parents. Inner loops run over the contiguous last axis.

namespace dva::nn {

namespace detail {

inline std::int64_t prod(const std::vector<int>& shape, int from, int to) {
  std::int64_t p = 1;
  for (int i = from; i < to; ++i) p *= shape[std::size_t(i)];
  return p;
}

// valid output range [lo, hi) such that 0 <= o*stride + k - pad < in_size
inline void conv_range(int in_size, int out_size, int stride, int pad, int k,
                       int& lo, int& hi) {
  const int lo_num = pad - k;
  lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  const int hi_num = in_size - 1 - k + pad;
  hi = hi_num < 0 ? 0 : std::min(out_size, hi_num / stride + 1);
  if (hi < lo) hi = lo;
}

struct LerpTable {
  std::vector<int> i0, i1;  // i1 == -1 marks a zero sample past the far edge
  std::vector<double> t;
};

// src = dst / factor, so dst = factor*j lands exactly on source index j
// (quarter-resolution index j means 4j at full resolution). Past the last
// source sample the signal either repeats the edge value or decays to zero.
inline LerpTable make_lerp_table(int in_size, int factor, bool zero_tail = false) {
  LerpTable tab;
  const int out = in_size * factor;
  tab.i0.resize(std::size_t(out));
  tab.i1.resize(std::size_t(out));
  tab.t.resize(std::size_t(out));
  for (int o = 0; o < out; ++o) {
    const double src = double(o) / factor;
    int i0 = int(std::floor(src));
    if (i0 > in_size - 1) i0 = in_size - 1;
    int i1 = i0 + 1;
    if (i1 > in_size - 1) i1 = zero_tail ? -1 : in_size - 1;
    tab.i0[std::size_t(o)] = i0;
    tab.i1[std::size_t(o)] = i1;
    tab.t[std::size_t(o)] = src - i0;
  }
  return tab;
}

}  // namespace detail

// --- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value()))
    throw InvariantError("add: shape mismatch " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  Tensor<T> y(a.value().shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* py = y.data();
  const std::int64_t n = y.size();
  for (std::int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
  Node<T>* an = a.node().get();
  Node<T>* bn = b.node().get();
  return make_op<T>(std::move(y), {a, b}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    const std::int64_t m = self.grad.size();
    if (an->requires_grad) {
      T* ga = an->ensure_grad().data();
      for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      T* gb = bn->ensure_grad().data();
      for (std::int64_t i = 0; i < m; ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double k) {
  Tensor<T> y(x.value().shape());
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.size(); ++i) py[i] = T(k) * px[i];
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, k](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T* g = self.grad.data();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) gx[i] += T(k) * g[i];
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> y(x.value().shape());
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-px[i]));
    py[i] = px[i] * s;
  }
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    const T* px = xn->value.data();
    T* gx = xn->ensure_grad().data();
    const T* g = self.grad.data();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-px[i]));
      gx[i] += g[i] * s * (T(1) + px[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y(x.value().shape());
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t i = 0; i < y.size(); ++i) py[i] = T(1) / (T(1) + std::exp(-px[i]));
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T* g = self.grad.data();
    const T* py = self.value.data();
    for (std::int64_t i = 0; i < self.grad.size(); ++i)
      gx[i] += g[i] * py[i] * (T(1) - py[i]);
  });
}

// --- softmax and expectations ------------------------------------------------

template <typename T>
Var<T> softmax(const Var<T>& x, int axis) {
  const auto& shape = x.value().shape();
  const std::int64_t outer = detail::prod(shape, 0, axis);
  const int len = shape[std::size_t(axis)];
  const std::int64_t inner = detail::prod(shape, axis + 1, int(shape.size()));
  Tensor<T> y(shape);
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      T mx = px[base];
      for (int l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
      T sum = T(0);
      for (int l = 0; l < len; ++l) {
        const T e = std::exp(px[base + l * inner] - mx);
        py[base + l * inner] = e;
        sum += e;
      }
      const T norm = T(1) / sum;
      for (int l = 0; l < len; ++l) py[base + l * inner] *= norm;
    }
  }
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, outer, len, inner](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T* g = self.grad.data();
    const T* py = self.value.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * len * inner + in;
        T dot = T(0);
        for (int l = 0; l < len; ++l) dot += g[base + l * inner] * py[base + l * inner];
        for (int l = 0; l < len; ++l) {
          const std::int64_t k = base + l * inner;
          gx[k] += py[k] * (g[k] - dot);
        }
      }
    }
  });
}

// out[..., 0, ...] = sum_l weights[l] * p[..., l, ...]; the reduced axis is
// kept with size 1.
template <typename T>
Var<T> index_expectation(const Var<T>& p, int axis, const std::vector<T>& weights) {
  const auto& shape = p.value().shape();
  const int len = shape[std::size_t(axis)];
  if (int(weights.size()) != len)
    throw InvariantError("index_expectation: weight count mismatch");
  const std::int64_t outer = detail::prod(shape, 0, axis);
  const std::int64_t inner = detail::prod(shape, axis + 1, int(shape.size()));
  std::vector<int> out_shape = shape;
  out_shape[std::size_t(axis)] = 1;
  Tensor<T> y(out_shape);
  const T* pp = p.value().data();
  T* py = y.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      T acc = T(0);
      const std::int64_t base = o * len * inner + in;
      for (int l = 0; l < len; ++l) acc += weights[std::size_t(l)] * pp[base + l * inner];
      py[o * inner + in] = acc;
    }
  }
  Node<T>* pn = p.node().get();
  return make_op<T>(std::move(y), {p},
                    [pn, outer, len, inner, weights](Node<T>& self) {
                      if (!pn->requires_grad) return;
                      T* gp = pn->ensure_grad().data();
                      const T* g = self.grad.data();
                      for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t in = 0; in < inner; ++in) {
                          const T gv = g[o * inner + in];
                          const std::int64_t base = o * len * inner + in;
                          for (int l = 0; l < len; ++l)
                            gp[base + l * inner] += weights[std::size_t(l)] * gv;
                        }
                    });
}

// --- reductions -------------------------------------------------------------

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  Tensor<T> y({1});
  const T* px = x.value().data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.value().size(); ++i) acc += double(px[i]);
  const std::int64_t n = x.value().size();
  y[0] = T(acc / double(n));
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T g = self.grad[0] / T(n);
    for (std::int64_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
  });
}

// Scalar dot product with a constant weight tensor.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  if (!x.value().same_shape(weights))
    throw InvariantError("weighted_sum: shape mismatch");
  Tensor<T> y({1});
  double acc = 0.0;
  const T* px = x.value().data();
  const T* pw = weights.data();
  for (std::int64_t i = 0; i < weights.size(); ++i) acc += double(px[i]) * double(pw[i]);
  y[0] = T(acc);
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, weights](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T g = self.grad[0];
    const T* pw = weights.data();
    for (std::int64_t i = 0; i < weights.size(); ++i) gx[i] += g * pw[i];
  });
}

// Mean smooth-L1 over pixels where mask != 0. target and mask are constants.
template <typename T>
Var<T> masked_smooth_l1(const Var<T>& pred, const Tensor<T>& target,
                        const Tensor<T>& mask) {
  if (!pred.value().same_shape(target) || !pred.value().same_shape(mask))
    throw InvariantError("masked_smooth_l1: shape mismatch");
  const T* pp = pred.value().data();
  const T* pt = target.data();
  const T* pm = mask.data();
  std::int64_t count = 0;
  double acc = 0.0;
  for (std::int64_t i = 0; i < target.size(); ++i) {
    if (pm[i] == T(0)) continue;
    ++count;
    const double d = double(pp[i]) - double(pt[i]);
    const double a = std::abs(d);
    acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  if (count == 0) throw DataError("masked_smooth_l1: empty mask");
  Tensor<T> y({1});
  y[0] = T(acc / double(count));
  Node<T>* pn = pred.node().get();
  return make_op<T>(std::move(y), {pred}, [pn, target, mask, count](Node<T>& self) {
    if (!pn->requires_grad) return;
    T* gp = pn->ensure_grad().data();
    const T* pp = pn->value.data();
    const T* pt = target.data();
    const T* pm = mask.data();
    const T g = self.grad[0] / T(count);
    for (std::int64_t i = 0; i < target.size(); ++i) {
      if (pm[i] == T(0)) continue;
      const T d = pp[i] - pt[i];
      const T dd = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
      gp[i] += g * dd;
    }
  });
}

// --- batch plumbing ----------------------------------------------------------

template <typename T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.value().shape();
  const auto& sb = b.value().shape();
  if (sa.size() != sb.size()) throw InvariantError("concat_batch: rank mismatch");
  for (std::size_t i = 1; i < sa.size(); ++i)
    if (sa[i] != sb[i]) throw InvariantError("concat_batch: trailing shape mismatch");
  std::vector<int> out_shape = sa;
  out_shape[0] = sa[0] + sb[0];
  Tensor<T> y(out_shape);
  std::copy(a.value().data(), a.value().data() + a.value().size(), y.data());
  std::copy(b.value().data(), b.value().data() + b.value().size(),
            y.data() + a.value().size());
  Node<T>* an = a.node().get();
  Node<T>* bn = b.node().get();
  const std::int64_t na = a.value().size();
  return make_op<T>(std::move(y), {a, b}, [an, bn, na](Node<T>& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      T* ga = an->ensure_grad().data();
      for (std::int64_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      T* gb = bn->ensure_grad().data();
      for (std::int64_t i = 0; i < self.grad.size() - na; ++i) gb[i] += g[na + i];
    }
  });
}

template <typename T>
Var<T> slice_batch(const Var<T>& x, int from, int count) {
  const auto& s = x.value().shape();
  if (from < 0 || count <= 0 || from + count > s[0])
    throw InvariantError("slice_batch: range out of bounds");
  std::vector<int> out_shape = s;
  out_shape[0] = count;
  const std::int64_t per = detail::prod(s, 1, int(s.size()));
  Tensor<T> y(out_shape);
  std::copy(x.value().data() + from * per, x.value().data() + (from + count) * per,
            y.data());
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, from, per](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data() + from * per;
    const T* g = self.grad.data();
    for (std::int64_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i];
  });
}

// --- convolutions ------------------------------------------------------------

// x [N,Ci,H,W], w [Co,Ci/groups,kh,kw], b [Co] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
              int pad, int groups = 1) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  if (xs.size() != 4 || ws.size() != 4) throw InvariantError("conv2d: rank");
  const int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const int Co = ws[0], Cig = ws[1], kh = ws[2], kw = ws[3];
  if (Ci % groups != 0 || Co % groups != 0 || Cig != Ci / groups)
    throw InvariantError("conv2d: group/channel mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw InvariantError("conv2d: empty output");
  const int cog = Co / groups;

  Tensor<T> y({N, Co, Ho, Wo});
  const T* px = x.value().data();
  const T* pw = w.value().data();
  const T* pb = b.defined() ? b.value().data() : nullptr;
  T* py = y.data();

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* yplane = py + (std::int64_t(n) * Co + co) * Ho * Wo;
      const T bias = pb ? pb[co] : T(0);
      for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) yplane[i] = bias;
      const int gidx = co / cog;
      for (int cig = 0; cig < Cig; ++cig) {
        const int ci = gidx * Cig + cig;
        const T* xplane = px + (std::int64_t(n) * Ci + ci) * H * W;
        for (int fy = 0; fy < kh; ++fy) {
          int oh_lo, oh_hi;
          detail::conv_range(H, Ho, stride, pad, fy, oh_lo, oh_hi);
          for (int fx = 0; fx < kw; ++fx) {
            const T wv = pw[((std::int64_t(co) * Cig + cig) * kh + fy) * kw + fx];
            int ow_lo, ow_hi;
            detail::conv_range(W, Wo, stride, pad, fx, ow_lo, ow_hi);
            const int nw = ow_hi - ow_lo;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const int ih = oh * stride + fy - pad;
              const T* xrow = xplane + std::int64_t(ih) * W + (ow_lo * stride + fx - pad);
              T* yrow = yplane + std::int64_t(oh) * Wo + ow_lo;
              if (stride == 1) {
#pragma omp simd
                for (int i = 0; i < nw; ++i) yrow[i] += wv * xrow[i];
              } else {
                for (int i = 0; i < nw; ++i) yrow[i] += wv * xrow[std::int64_t(i) * stride];
              }
            }
          }
        }
      }
    }
  }

  Node<T>* xn = x.node().get();
  Node<T>* wn = w.node().get();
  Node<T>* bnode = b.defined() ? b.node().get() : nullptr;
  std::vector<Var<T>> inputs = b.defined() ? std::vector<Var<T>>{x, w, b}
                                           : std::vector<Var<T>>{x, w};
  return make_op<T>(
      std::move(y), std::move(inputs),
      [xn, wn, bnode, N, Ci, H, W, Co, Cig, kh, kw, Ho, Wo, stride, pad,
       cog](Node<T>& self) {
        const T* g = self.grad.data();
        const T* px = xn->value.data();
        const T* pw = wn->value.data();

        if (xn->requires_grad) {
          T* gx = xn->ensure_grad().data();
          for (int n = 0; n < N; ++n) {
            for (int co = 0; co < Co; ++co) {
              const T* gplane = g + (std::int64_t(n) * Co + co) * Ho * Wo;
              const int gidx = co / cog;
              for (int cig = 0; cig < Cig; ++cig) {
                const int ci = gidx * Cig + cig;
                T* gxplane = gx + (std::int64_t(n) * Ci + ci) * H * W;
                for (int fy = 0; fy < kh; ++fy) {
                  int oh_lo, oh_hi;
                  detail::conv_range(H, Ho, stride, pad, fy, oh_lo, oh_hi);
                  for (int fx = 0; fx < kw; ++fx) {
                    const T wv =
                        pw[((std::int64_t(co) * Cig + cig) * kh + fy) * kw + fx];
                    int ow_lo, ow_hi;
                    detail::conv_range(W, Wo, stride, pad, fx, ow_lo, ow_hi);
                    const int nw = ow_hi - ow_lo;
                    for (int oh = oh_lo; oh < oh_hi; ++oh) {
                      const int ih = oh * stride + fy - pad;
                      T* gxrow =
                          gxplane + std::int64_t(ih) * W + (ow_lo * stride + fx - pad);
                      const T* grow = gplane + std::int64_t(oh) * Wo + ow_lo;
                      if (stride == 1) {
#pragma omp simd
                        for (int i = 0; i < nw; ++i) gxrow[i] += wv * grow[i];
                      } else {
                        for (int i = 0; i < nw; ++i)
                          gxrow[std::int64_t(i) * stride] += wv * grow[i];
                      }
                    }
                  }
                }
              }
            }
          }
        }

        if (wn->requires_grad) {
          T* gw = wn->ensure_grad().data();
          for (int co = 0; co < Co; ++co) {
            const int gidx = co / cog;
            for (int cig = 0; cig < Cig; ++cig) {
              const int ci = gidx * Cig + cig;
              for (int fy = 0; fy < kh; ++fy) {
                int oh_lo, oh_hi;
                detail::conv_range(H, Ho, stride, pad, fy, oh_lo, oh_hi);
                for (int fx = 0; fx < kw; ++fx) {
                  int ow_lo, ow_hi;
                  detail::conv_range(W, Wo, stride, pad, fx, ow_lo, ow_hi);
                  const int nw = ow_hi - ow_lo;
                  T acc = T(0);
                  for (int n = 0; n < N; ++n) {
                    const T* gplane = g + (std::int64_t(n) * Co + co) * Ho * Wo;
                    const T* xplane = px + (std::int64_t(n) * Ci + ci) * H * W;
                    for (int oh = oh_lo; oh < oh_hi; ++oh) {
                      const int ih = oh * stride + fy - pad;
                      const T* xrow =
                          xplane + std::int64_t(ih) * W + (ow_lo * stride + fx - pad);
                      const T* grow = gplane + std::int64_t(oh) * Wo + ow_lo;
                      if (stride == 1) {
#pragma omp simd reduction(+ : acc)
                        for (int i = 0; i < nw; ++i) acc += xrow[i] * grow[i];
                      } else {
                        for (int i = 0; i < nw; ++i)
                          acc += xrow[std::int64_t(i) * stride] * grow[i];
                      }
                    }
                  }
                  gw[((std::int64_t(co) * Cig + cig) * kh + fy) * kw + fx] += acc;
                }
              }
            }
          }
        }

        if (bnode && bnode->requires_grad) {
          T* gb = bnode->ensure_grad().data();
          for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
              const T* gplane = g + (std::int64_t(n) * Co + co) * Ho * Wo;
              T acc = T(0);
#pragma omp simd reduction(+ : acc)
              for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) acc += gplane[i];
              gb[co] += acc;
            }
        }
      });
}

// x [N,Ci,D,H,W], w [Co,Ci,kd,kh,kw], b [Co] or undefined.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride,
              int pad) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  if (xs.size() != 5 || ws.size() != 5) throw InvariantError("conv3d: rank");
  const int N = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const int Co = ws[0], kd = ws[2], kh = ws[3], kw = ws[4];
  if (ws[1] != Ci) throw InvariantError("conv3d: channel mismatch");
  const int Do = (D + 2 * pad - kd) / stride + 1;
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Do <= 0 || Ho <= 0 || Wo <= 0) throw InvariantError("conv3d: empty output");

  Tensor<T> y({N, Co, Do, Ho, Wo});
  const T* px = x.value().data();
  const T* pw = w.value().data();
  const T* pb = b.defined() ? b.value().data() : nullptr;
  T* py = y.data();
  const std::int64_t yplane_sz = std::int64_t(Do) * Ho * Wo;
  const std::int64_t xplane_sz = std::int64_t(D) * H * W;

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* yplane = py + (std::int64_t(n) * Co + co) * yplane_sz;
      const T bias = pb ? pb[co] : T(0);
      for (std::int64_t i = 0; i < yplane_sz; ++i) yplane[i] = bias;
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xplane = px + (std::int64_t(n) * Ci + ci) * xplane_sz;
        for (int fd = 0; fd < kd; ++fd) {
          int od_lo, od_hi;
          detail::conv_range(D, Do, stride, pad, fd, od_lo, od_hi);
          for (int fy = 0; fy < kh; ++fy) {
            int oh_lo, oh_hi;
            detail::conv_range(H, Ho, stride, pad, fy, oh_lo, oh_hi);
            for (int fx = 0; fx < kw; ++fx) {
              const T wv =
                  pw[(((std::int64_t(co) * Ci + ci) * kd + fd) * kh + fy) * kw + fx];
              int ow_lo, ow_hi;
              detail::conv_range(W, Wo, stride, pad, fx, ow_lo, ow_hi);
              const int nw = ow_hi - ow_lo;
              for (int od = od_lo; od < od_hi; ++od) {
                const int id = od * stride + fd - pad;
                for (int oh = oh_lo; oh < oh_hi; ++oh) {
                  const int ih = oh * stride + fy - pad;
                  const T* xrow = xplane + (std::int64_t(id) * H + ih) * W +
                                  (ow_lo * stride + fx - pad);
                  T* yrow = yplane + (std::int64_t(od) * Ho + oh) * Wo + ow_lo;
                  if (stride == 1) {
#pragma omp simd
                    for (int i = 0; i < nw; ++i) yrow[i] += wv * xrow[i];
                  } else {
                    for (int i = 0; i < nw; ++i)
                      yrow[i] += wv * xrow[std::int64_t(i) * stride];
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  Node<T>* xn = x.node().get();
  Node<T>* wn = w.node().get();
  Node<T>* bnode = b.defined() ? b.node().get() : nullptr;
  std::vector<Var<T>> inputs = b.defined() ? std::vector<Var<T>>{x, w, b}
                                           : std::vector<Var<T>>{x, w};
  return make_op<T>(
      std::move(y), std::move(inputs),
      [xn, wn, bnode, N, Ci, D, H, W, Co, kd, kh, kw, Do, Ho, Wo, stride, pad,
       yplane_sz, xplane_sz](Node<T>& self) {
        const T* g = self.grad.data();
        const T* px = xn->value.data();
        const T* pw = wn->value.data();

        if (xn->requires_grad) {
          T* gx = xn->ensure_grad().data();
          for (int n = 0; n < N; ++n) {
            for (int co = 0; co < Co; ++co) {
              const T* gplane = g + (std::int64_t(n) * Co + co) * yplane_sz;
              for (int ci = 0; ci < Ci; ++ci) {
                T* gxplane = gx + (std::int64_t(n) * Ci + ci) * xplane_sz;
                for (int fd = 0; fd < kd; ++fd) {
                  int od_lo, od_hi;
                  detail::conv_range(D, Do, stride, pad, fd, od_lo, od_hi);
                  for (int fy = 0; fy < kh; ++fy) {
                    int oh_lo, oh_hi;
                    detail::conv_range(H, Ho, stride, pad, fy, oh_lo, oh_hi);
                    for (int fx = 0; fx < kw; ++fx) {
                      const T wv =
                          pw[(((std::int64_t(co) * Ci + ci) * kd + fd) * kh + fy) * kw +
                             fx];
                      int ow_lo, ow_hi;
                      detail::conv_range(W, Wo, stride, pad, fx, ow_lo, ow_hi);
                      const int nw = ow_hi - ow_lo;
                      for (int od = od_lo; od < od_hi; ++od) {
                        const int id = od * stride + fd - pad;
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                          const int ih = oh * stride + fy - pad;
                          T* gxrow = gxplane + (std::int64_t(id) * H + ih) * W +
                                     (ow_lo * stride + fx - pad);
                          const T* grow =
                              gplane + (std::int64_t(od) * Ho + oh) * Wo + ow_lo;
                          if (stride == 1) {
#pragma omp simd
                            for (int i = 0; i < nw; ++i) gxrow[i] += wv * grow[i];
                          } else {
                            for (int i = 0; i < nw; ++i)
                              gxrow[std::int64_t(i) * stride] += wv * grow[i];
                          }
                        }
                      }
                    }
                  }
                }
              }
            }
          }
        }

        if (wn->requires_grad) {
          T* gw = wn->ensure_grad().data();
          for (int co = 0; co < Co; ++co) {
            for (int ci = 0; ci < Ci; ++ci) {
              for (int fd = 0; fd < kd; ++fd) {
                int od_lo, od_hi;
                detail::conv_range(D, Do, stride, pad, fd, od_lo, od_hi);
                for (int fy = 0; fy < kh; ++fy) {
                  int oh_lo, oh_hi;
                  detail::conv_range(H, Ho, stride, pad, fy, oh_lo, oh_hi);
                  for (int fx = 0; fx < kw; ++fx) {
                    int ow_lo, ow_hi;
                    detail::conv_range(W, Wo, stride, pad, fx, ow_lo, ow_hi);
                    const int nw = ow_hi - ow_lo;
                    T acc = T(0);
                    for (int n = 0; n < N; ++n) {
                      const T* gplane = g + (std::int64_t(n) * Co + co) * yplane_sz;
                      const T* xplane = px + (std::int64_t(n) * Ci + ci) * xplane_sz;
                      for (int od = od_lo; od < od_hi; ++od) {
                        const int id = od * stride + fd - pad;
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                          const int ih = oh * stride + fy - pad;
                          const T* xrow = xplane + (std::int64_t(id) * H + ih) * W +
                                          (ow_lo * stride + fx - pad);
                          const T* grow =
                              gplane + (std::int64_t(od) * Ho + oh) * Wo + ow_lo;
                          if (stride == 1) {
#pragma omp simd reduction(+ : acc)
                            for (int i = 0; i < nw; ++i) acc += xrow[i] * grow[i];
                          } else {
                            for (int i = 0; i < nw; ++i)
                              acc += xrow[std::int64_t(i) * stride] * grow[i];
                          }
                        }
                      }
                    }
                    gw[(((std::int64_t(co) * Ci + ci) * kd + fd) * kh + fy) * kw + fx] +=
                        acc;
                  }
                }
              }
            }
          }
        }

        if (bnode && bnode->requires_grad) {
          T* gb = bnode->ensure_grad().data();
          for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
              const T* gplane = g + (std::int64_t(n) * Co + co) * yplane_sz;
              T acc = T(0);
#pragma omp simd reduction(+ : acc)
              for (std::int64_t i = 0; i < yplane_sz; ++i) acc += gplane[i];
              gb[co] += acc;
            }
        }
      });
}

// --- batch norm ---------------------------------------------------------------

// Normalizes over every axis except 1 (channels); works for 4D and 5D input.
// Training mode uses batch statistics and updates the running buffers;
// eval mode is a fixed affine map of the running statistics.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5) {
  const auto& xs = x.value().shape();
  if (xs.size() < 2) throw InvariantError("batch_norm: rank");
  const int N = xs[0];
  const int C = xs[1];
  const std::int64_t S = detail::prod(xs, 2, int(xs.size()));
  const std::int64_t M = std::int64_t(N) * S;
  if (gamma.value().size() != C || beta.value().size() != C)
    throw InvariantError("batch_norm: affine size mismatch");

  std::vector<double> mean(std::size_t(C), 0.0);
  std::vector<double> invstd(std::size_t(C), 0.0);
  const T* px = x.value().data();
  if (training) {
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* p = px + (std::int64_t(n) * C + c) * S;
#pragma omp simd reduction(+ : sum, sq)
        for (std::int64_t i = 0; i < S; ++i) {
          sum += double(p[i]);
          sq += double(p[i]) * double(p[i]);
        }
      }
      const double mu = sum / double(M);
      double var = sq / double(M) - mu * mu;
      if (var < 0.0) var = 0.0;
      mean[std::size_t(c)] = mu;
      invstd[std::size_t(c)] = 1.0 / std::sqrt(var + eps);
      if (running_mean && running_var) {
        const double unbiased = M > 1 ? var * double(M) / double(M - 1) : var;
        (*running_mean)[c] = T((1.0 - momentum) * double((*running_mean)[c]) +
                               momentum * mu);
        (*running_var)[c] =
            T((1.0 - momentum) * double((*running_var)[c]) + momentum * unbiased);
      }
    }
  } else {
    if (!running_mean || !running_var)
      throw InvariantError("batch_norm: eval mode needs running stats");
    for (int c = 0; c < C; ++c) {
      mean[std::size_t(c)] = double((*running_mean)[c]);
      invstd[std::size_t(c)] = 1.0 / std::sqrt(double((*running_var)[c]) + eps);
    }
  }

  Tensor<T> y(xs);
  T* py = y.data();
  const T* pg = gamma.value().data();
  const T* pbeta = beta.value().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = px + (std::int64_t(n) * C + c) * S;
      T* q = py + (std::int64_t(n) * C + c) * S;
      const T a = T(invstd[std::size_t(c)]) * pg[c];
      const T b0 = pbeta[c] - T(mean[std::size_t(c)]) * a;
#pragma omp simd
      for (std::int64_t i = 0; i < S; ++i) q[i] = a * p[i] + b0;
    }

  Node<T>* xn = x.node().get();
  Node<T>* gn = gamma.node().get();
  Node<T>* bn = beta.node().get();
  return make_op<T>(
      std::move(y), {x, gamma, beta},
      [xn, gn, bn, N, C, S, M, mean, invstd, training](Node<T>& self) {
        const T* g = self.grad.data();
        const T* px = xn->value.data();
        const T* pg = gn->value.data();
        // per-channel gradient sums
        std::vector<double> sum_dy(std::size_t(C), 0.0);
        std::vector<double> sum_dy_xhat(std::size_t(C), 0.0);
        for (int c = 0; c < C; ++c) {
          double s1 = 0.0, s2 = 0.0;
          const double mu = mean[std::size_t(c)];
          const double is = invstd[std::size_t(c)];
          for (int n = 0; n < N; ++n) {
            const T* gp = g + (std::int64_t(n) * C + c) * S;
            const T* xp = px + (std::int64_t(n) * C + c) * S;
#pragma omp simd reduction(+ : s1, s2)
            for (std::int64_t i = 0; i < S; ++i) {
              s1 += double(gp[i]);
              s2 += double(gp[i]) * ((double(xp[i]) - mu) * is);
            }
          }
          sum_dy[std::size_t(c)] = s1;
          sum_dy_xhat[std::size_t(c)] = s2;
        }
        if (gn->requires_grad) {
          T* gg = gn->ensure_grad().data();
          for (int c = 0; c < C; ++c) gg[c] += T(sum_dy_xhat[std::size_t(c)]);
        }
        if (bn->requires_grad) {
          T* gb = bn->ensure_grad().data();
          for (int c = 0; c < C; ++c) gb[c] += T(sum_dy[std::size_t(c)]);
        }
        if (xn->requires_grad) {
          T* gx = xn->ensure_grad().data();
          for (int c = 0; c < C; ++c) {
            const double mu = mean[std::size_t(c)];
            const double is = invstd[std::size_t(c)];
            const double gam = double(pg[c]);
            if (training) {
              const double k1 = sum_dy[std::size_t(c)] / double(M);
              const double k2 = sum_dy_xhat[std::size_t(c)] / double(M);
              for (int n = 0; n < N; ++n) {
                const T* gp = g + (std::int64_t(n) * C + c) * S;
                const T* xp = px + (std::int64_t(n) * C + c) * S;
                T* q = gx + (std::int64_t(n) * C + c) * S;
#pragma omp simd
                for (std::int64_t i = 0; i < S; ++i) {
                  const double xhat = (double(xp[i]) - mu) * is;
                  q[i] += T(gam * is * (double(gp[i]) - k1 - xhat * k2));
                }
              }
            } else {
              const T a = T(gam * is);
              for (int n = 0; n < N; ++n) {
                const T* gp = g + (std::int64_t(n) * C + c) * S;
                T* q = gx + (std::int64_t(n) * C + c) * S;
#pragma omp simd
                for (std::int64_t i = 0; i < S; ++i) q[i] += a * gp[i];
              }
            }
          }
        }
      });
}

// --- interpolation -------------------------------------------------------------

template <typename T>
Var<T> upsample_bilinear2d(const Var<T>& x, int factor) {
  const auto& xs = x.value().shape();
  if (xs.size() != 4) throw InvariantError("upsample2d: rank");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int Ho = H * factor, Wo = W * factor;
  const auto ty = detail::make_lerp_table(H, factor);
  const auto tx = detail::make_lerp_table(W, factor);
  Tensor<T> y({N, C, Ho, Wo});
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    const T* xp = px + nc * H * W;
    T* yp = py + nc * std::int64_t(Ho) * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      const int y0 = ty.i0[std::size_t(oy)], y1 = ty.i1[std::size_t(oy)];
      const T wy = T(ty.t[std::size_t(oy)]);
      for (int ox = 0; ox < Wo; ++ox) {
        const int x0 = tx.i0[std::size_t(ox)], x1 = tx.i1[std::size_t(ox)];
        const T wx = T(tx.t[std::size_t(ox)]);
        const T a = xp[std::int64_t(y0) * W + x0] * (T(1) - wx) +
                    xp[std::int64_t(y0) * W + x1] * wx;
        const T b = xp[std::int64_t(y1) * W + x0] * (T(1) - wx) +
                    xp[std::int64_t(y1) * W + x1] * wx;
        yp[std::int64_t(oy) * Wo + ox] = a * (T(1) - wy) + b * wy;
      }  // 2d path never zero-pads; tables stay within range
    }
  }
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, N, C, H, W, Ho, Wo, ty, tx](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T* g = self.grad.data();
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
      T* gxp = gx + nc * H * W;
      const T* gp = g + nc * std::int64_t(Ho) * Wo;
      for (int oy = 0; oy < Ho; ++oy) {
        const int y0 = ty.i0[std::size_t(oy)], y1 = ty.i1[std::size_t(oy)];
        const T wy = T(ty.t[std::size_t(oy)]);
        for (int ox = 0; ox < Wo; ++ox) {
          const int x0 = tx.i0[std::size_t(ox)], x1 = tx.i1[std::size_t(ox)];
          const T wx = T(tx.t[std::size_t(ox)]);
          const T gv = gp[std::int64_t(oy) * Wo + ox];
          gxp[std::int64_t(y0) * W + x0] += gv * (T(1) - wy) * (T(1) - wx);
          gxp[std::int64_t(y0) * W + x1] += gv * (T(1) - wy) * wx;
          gxp[std::int64_t(y1) * W + x0] += gv * wy * (T(1) - wx);
          gxp[std::int64_t(y1) * W + x1] += gv * wy * wx;
        }
      }
    }
  });
}

// `zero_tail_depth` makes the first interpolated axis decay to zero past its
// last sample instead of repeating it; used for the disparity axis where the
// volume is zero-filled outside its support.
template <typename T>
Var<T> upsample_trilinear3d(const Var<T>& x, int factor, bool zero_tail_depth = false) {
  const auto& xs = x.value().shape();
  if (xs.size() != 5) throw InvariantError("upsample3d: rank");
  const int N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const int Do = D * factor, Ho = H * factor, Wo = W * factor;
  const auto td = detail::make_lerp_table(D, factor, zero_tail_depth);
  const auto ty = detail::make_lerp_table(H, factor);
  const auto tx = detail::make_lerp_table(W, factor);
  Tensor<T> y({N, C, Do, Ho, Wo});
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    const T* xp = px + nc * std::int64_t(D) * H * W;
    T* yp = py + nc * std::int64_t(Do) * Ho * Wo;
    for (int od = 0; od < Do; ++od) {
      const int d0 = td.i0[std::size_t(od)], d1 = td.i1[std::size_t(od)];
      const T wd = T(td.t[std::size_t(od)]);
      for (int oy = 0; oy < Ho; ++oy) {
        const int y0 = ty.i0[std::size_t(oy)], y1 = ty.i1[std::size_t(oy)];
        const T wy = T(ty.t[std::size_t(oy)]);
        for (int ox = 0; ox < Wo; ++ox) {
          const int x0 = tx.i0[std::size_t(ox)], x1 = tx.i1[std::size_t(ox)];
          const T wx = T(tx.t[std::size_t(ox)]);
          auto at = [&](int dd, int yy, int xx) {
            return xp[(std::int64_t(dd) * H + yy) * W + xx];
          };
          const T c00 = at(d0, y0, x0) * (T(1) - wx) + at(d0, y0, x1) * wx;
          const T c01 = at(d0, y1, x0) * (T(1) - wx) + at(d0, y1, x1) * wx;
          const T c0 = c00 * (T(1) - wy) + c01 * wy;
          T c1 = T(0);
          if (d1 >= 0) {
            const T c10 = at(d1, y0, x0) * (T(1) - wx) + at(d1, y0, x1) * wx;
            const T c11 = at(d1, y1, x0) * (T(1) - wx) + at(d1, y1, x1) * wx;
            c1 = c10 * (T(1) - wy) + c11 * wy;
          }
          yp[(std::int64_t(od) * Ho + oy) * Wo + ox] = c0 * (T(1) - wd) + c1 * wd;
        }
      }
    }
  }
  Node<T>* xn = x.node().get();
  return make_op<T>(
      std::move(y), {x}, [xn, N, C, D, H, W, Do, Ho, Wo, td, ty, tx](Node<T>& self) {
        if (!xn->requires_grad) return;
        T* gx = xn->ensure_grad().data();
        const T* g = self.grad.data();
        for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
          T* gxp = gx + nc * std::int64_t(D) * H * W;
          const T* gp = g + nc * std::int64_t(Do) * Ho * Wo;
          for (int od = 0; od < Do; ++od) {
            const int d0 = td.i0[std::size_t(od)], d1 = td.i1[std::size_t(od)];
            const T wd = T(td.t[std::size_t(od)]);
            for (int oy = 0; oy < Ho; ++oy) {
              const int y0 = ty.i0[std::size_t(oy)], y1 = ty.i1[std::size_t(oy)];
              const T wy = T(ty.t[std::size_t(oy)]);
              for (int ox = 0; ox < Wo; ++ox) {
                const int x0 = tx.i0[std::size_t(ox)], x1 = tx.i1[std::size_t(ox)];
                const T wx = T(tx.t[std::size_t(ox)]);
                const T gv = gp[(std::int64_t(od) * Ho + oy) * Wo + ox];
                auto acc = [&](int dd, int yy, int xx, T w) {
                  gxp[(std::int64_t(dd) * H + yy) * W + xx] += gv * w;
                };
                acc(d0, y0, x0, (T(1) - wd) * (T(1) - wy) * (T(1) - wx));
                acc(d0, y0, x1, (T(1) - wd) * (T(1) - wy) * wx);
                acc(d0, y1, x0, (T(1) - wd) * wy * (T(1) - wx));
                acc(d0, y1, x1, (T(1) - wd) * wy * wx);
                if (d1 >= 0) {
                  acc(d1, y0, x0, wd * (T(1) - wy) * (T(1) - wx));
                  acc(d1, y0, x1, wd * (T(1) - wy) * wx);
                  acc(d1, y1, x0, wd * wy * (T(1) - wx));
                  acc(d1, y1, x1, wd * wy * wx);
                }
              }
            }
          }
        }
      });
}

// --- pooling and broadcast products ---------------------------------------------

template <typename T>
Var<T> global_avg_pool2d(const Var<T>& x) {
  const auto& xs = x.value().shape();
  if (xs.size() != 4) throw InvariantError("gap2d: rank");
  const int N = xs[0], C = xs[1];
  const std::int64_t S = std::int64_t(xs[2]) * xs[3];
  Tensor<T> y({N, C, 1, 1});
  const T* px = x.value().data();
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    double acc = 0.0;
    const T* p = px + nc * S;
#pragma omp simd reduction(+ : acc)
    for (std::int64_t i = 0; i < S; ++i) acc += double(p[i]);
    y[nc] = T(acc / double(S));
  }
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {x}, [xn, N, C, S](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->ensure_grad().data();
    const T* g = self.grad.data();
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
      const T gv = g[nc] / T(S);
      T* p = gx + nc * S;
      for (std::int64_t i = 0; i < S; ++i) p[i] += gv;
    }
  });
}

// gate [N,C,1,1] * x [N,C,H,W]
template <typename T>
Var<T> mul_bcast_hw(const Var<T>& gate, const Var<T>& x) {
  const auto& gs = gate.value().shape();
  const auto& xs = x.value().shape();
  if (gs.size() != 4 || xs.size() != 4 || gs[0] != xs[0] || gs[1] != xs[1] ||
      gs[2] != 1 || gs[3] != 1)
    throw InvariantError("mul_bcast_hw: shape mismatch");
  const std::int64_t NC = std::int64_t(xs[0]) * xs[1];
  const std::int64_t S = std::int64_t(xs[2]) * xs[3];
  Tensor<T> y(xs);
  const T* pg = gate.value().data();
  const T* px = x.value().data();
  T* py = y.data();
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const T gv = pg[nc];
    const T* p = px + nc * S;
    T* q = py + nc * S;
#pragma omp simd
    for (std::int64_t i = 0; i < S; ++i) q[i] = gv * p[i];
  }
  Node<T>* gn = gate.node().get();
  Node<T>* xn = x.node().get();
  return make_op<T>(std::move(y), {gate, x}, [gn, xn, NC, S](Node<T>& self) {
    const T* g = self.grad.data();
    const T* pg = gn->value.data();
    const T* px = xn->value.data();
    if (gn->requires_grad) {
      T* gg = gn->ensure_grad().data();
      for (std::int64_t nc = 0; nc < NC; ++nc) {
        T acc = T(0);
        const T* gp = g + nc * S;
        const T* xp = px + nc * S;
#pragma omp simd reduction(+ : acc)
        for (std::int64_t i = 0; i < S; ++i) acc += gp[i] * xp[i];
        gg[nc] += acc;
      }
    }
    if (xn->requires_grad) {
      T* gx = xn->ensure_grad().data();
      for (std::int64_t nc = 0; nc < NC; ++nc) {
        const T gv = pg[nc];
        const T* gp = g + nc * S;
        T* q = gx + nc * S;
#pragma omp simd
        for (std::int64_t i = 0; i < S; ++i) q[i] += gv * gp[i];
      }
    }
  });
}

// att [N,C,H,W] * vol [N,C,D,H,W], broadcast along the disparity axis
template <typename T>
Var<T> mul_channel_gate(const Var<T>& att, const Var<T>& vol) {
  const auto& as = att.value().shape();
  const auto& vs = vol.value().shape();
  if (as.size() != 4 || vs.size() != 5 || as[0] != vs[0] || as[1] != vs[1] ||
      as[2] != vs[3] || as[3] != vs[4])
    throw InvariantError("mul_channel_gate: shape mismatch");
  const int N = vs[0], C = vs[1], D = vs[2];
  const std::int64_t S = std::int64_t(vs[3]) * vs[4];
  Tensor<T> y(vs);
  const T* pa = att.value().data();
  const T* pv = vol.value().data();
  T* py = y.data();
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    const T* ap = pa + nc * S;
    for (int d = 0; d < D; ++d) {
      const T* vp = pv + (nc * D + d) * S;
      T* q = py + (nc * D + d) * S;
#pragma omp simd
      for (std::int64_t i = 0; i < S; ++i) q[i] = ap[i] * vp[i];
    }
  }
  Node<T>* an = att.node().get();
  Node<T>* vn = vol.node().get();
  return make_op<T>(std::move(y), {att, vol}, [an, vn, N, C, D, S](Node<T>& self) {
    const T* g = self.grad.data();
    const T* pa = an->value.data();
    const T* pv = vn->value.data();
    if (an->requires_grad) {
      T* ga = an->ensure_grad().data();
      for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
        T* ap = ga + nc * S;
        for (int d = 0; d < D; ++d) {
          const T* gp = g + (nc * D + d) * S;
          const T* vp = pv + (nc * D + d) * S;
#pragma omp simd
          for (std::int64_t i = 0; i < S; ++i) ap[i] += gp[i] * vp[i];
        }
      }
    }
    if (vn->requires_grad) {
      T* gv = vn->ensure_grad().data();
      for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
        const T* ap = pa + nc * S;
        for (int d = 0; d < D; ++d) {
          const T* gp = g + (nc * D + d) * S;
          T* q = gv + (nc * D + d) * S;
#pragma omp simd
          for (std::int64_t i = 0; i < S; ++i) q[i] += ap[i] * gp[i];
        }
      }
    }
  });
}

// att [N,1,D,H,W] * vol [N,C,D,H,W], broadcast along the channel axis
template <typename T>
Var<T> mul_disp_gate(const Var<T>& att, const Var<T>& vol) {
  const auto& as = att.value().shape();
  const auto& vs = vol.value().shape();
  if (as.size() != 5 || vs.size() != 5 || as[0] != vs[0] || as[1] != 1 ||
      as[2] != vs[2] || as[3] != vs[3] || as[4] != vs[4])
    throw InvariantError("mul_disp_gate: shape mismatch");
  const int N = vs[0], C = vs[1];
  const std::int64_t S = std::int64_t(vs[2]) * vs[3] * vs[4];
  Tensor<T> y(vs);
  const T* pa = att.value().data();
  const T* pv = vol.value().data();
  T* py = y.data();
  for (int n = 0; n < N; ++n) {
    const T* ap = pa + std::int64_t(n) * S;
    for (int c = 0; c < C; ++c) {
      const T* vp = pv + (std::int64_t(n) * C + c) * S;
      T* q = py + (std::int64_t(n) * C + c) * S;
#pragma omp simd
      for (std::int64_t i = 0; i < S; ++i) q[i] = ap[i] * vp[i];
    }
  }
  Node<T>* an = att.node().get();
  Node<T>* vn = vol.node().get();
  return make_op<T>(std::move(y), {att, vol}, [an, vn, N, C, S](Node<T>& self) {
    const T* g = self.grad.data();
    const T* pa = an->value.data();
    const T* pv = vn->value.data();
    if (an->requires_grad) {
      T* ga = an->ensure_grad().data();
      for (int n = 0; n < N; ++n) {
        T* ap = ga + std::int64_t(n) * S;
        for (int c = 0; c < C; ++c) {
          const T* gp = g + (std::int64_t(n) * C + c) * S;
          const T* vp = pv + (std::int64_t(n) * C + c) * S;
#pragma omp simd
          for (std::int64_t i = 0; i < S; ++i) ap[i] += gp[i] * vp[i];
        }
      }
    }
    if (vn->requires_grad) {
      T* gv = vn->ensure_grad().data();
      for (int n = 0; n < N; ++n) {
        const T* ap = pa + std::int64_t(n) * S;
        for (int c = 0; c < C; ++c) {
          const T* gp = g + (std::int64_t(n) * C + c) * S;
          T* q = gv + (std::int64_t(n) * C + c) * S;
#pragma omp simd
          for (std::int64_t i = 0; i < S; ++i) q[i] += ap[i] * gp[i];
        }
      }
    }
  });
}

// --- cost volume construction ----------------------------------------------------

// out[n,c,d,h,x] = fl[n,c,h,x] - fr[n,c,h,x-d] for x >= d, else 0.
template <typename T>
Var<T> discrepancy_volume(const Var<T>& fl, const Var<T>& fr, int num_disp) {
  const auto& s = fl.value().shape();
  if (s.size() != 4 || !fl.value().same_shape(fr.value()))
    throw InvariantError("discrepancy_volume: shape mismatch");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  if (num_disp < 1 || num_disp > W)
    throw InvariantError("discrepancy_volume: disparity count exceeds width");
  Tensor<T> y({N, C, num_disp, H, W});
  const T* pl = fl.value().data();
  const T* pr = fr.value().data();
  T* py = y.data();
  for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
    const T* lp = pl + nc * H * W;
    const T* rp = pr + nc * H * W;
    for (int d = 0; d < num_disp; ++d) {
      T* q = py + (nc * num_disp + d) * H * W;
      for (int h = 0; h < H; ++h) {
        const T* lrow = lp + std::int64_t(h) * W;
        const T* rrow = rp + std::int64_t(h) * W;
        T* qrow = q + std::int64_t(h) * W;
        for (int x = 0; x < d; ++x) qrow[x] = T(0);
#pragma omp simd
        for (int x = d; x < W; ++x) qrow[x] = lrow[x] - rrow[x - d];
      }
    }
  }
  Node<T>* ln = fl.node().get();
  Node<T>* rn = fr.node().get();
  return make_op<T>(std::move(y), {fl, fr}, [ln, rn, N, C, H, W, num_disp](Node<T>& self) {
    const T* g = self.grad.data();
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
      T* gl = ln->requires_grad ? ln->ensure_grad().data() + nc * H * W : nullptr;
      T* gr = rn->requires_grad ? rn->ensure_grad().data() + nc * H * W : nullptr;
      for (int d = 0; d < num_disp; ++d) {
        const T* gp = g + (nc * num_disp + d) * H * W;
        for (int h = 0; h < H; ++h) {
          const T* grow = gp + std::int64_t(h) * W;
          if (gl) {
            T* lrow = gl + std::int64_t(h) * W;
#pragma omp simd
            for (int x = d; x < W; ++x) lrow[x] += grow[x];
          }
          if (gr) {
            T* rrow = gr + std::int64_t(h) * W;
#pragma omp simd
            for (int x = d; x < W; ++x) rrow[x - d] -= grow[x];
          }
        }
      }
    }
  });
}

// Group-wise correlation: out[n,g,d,h,x] = mean_c_in_g lf*rf(x-d), x >= d else 0.
template <typename T>
Var<T> correlation_volume(const Var<T>& fl, const Var<T>& fr, int num_disp,
                          int groups) {
  const auto& s = fl.value().shape();
  if (s.size() != 4 || !fl.value().same_shape(fr.value()))
    throw InvariantError("correlation_volume: shape mismatch");
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  if (C % groups != 0) throw InvariantError("correlation_volume: group mismatch");
  if (num_disp < 1 || num_disp > W)
    throw InvariantError("correlation_volume: disparity count exceeds width");
  const int cpg = C / groups;
  Tensor<T> y({N, groups, num_disp, H, W});
  const T* pl = fl.value().data();
  const T* pr = fr.value().data();
  T* py = y.data();
  y.fill(T(0));
  const T inv = T(1) / T(cpg);
  for (int n = 0; n < N; ++n)
    for (int gidx = 0; gidx < groups; ++gidx)
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = gidx * cpg + cc;
        const T* lp = pl + (std::int64_t(n) * C + c) * H * W;
        const T* rp = pr + (std::int64_t(n) * C + c) * H * W;
        for (int d = 0; d < num_disp; ++d) {
          T* q = py + ((std::int64_t(n) * groups + gidx) * num_disp + d) * H * W;
          for (int h = 0; h < H; ++h) {
            const T* lrow = lp + std::int64_t(h) * W;
            const T* rrow = rp + std::int64_t(h) * W;
            T* qrow = q + std::int64_t(h) * W;
#pragma omp simd
            for (int x = d; x < W; ++x) qrow[x] += inv * lrow[x] * rrow[x - d];
          }
        }
      }
  Node<T>* ln = fl.node().get();
  Node<T>* rn = fr.node().get();
  return make_op<T>(
      std::move(y), {fl, fr}, [ln, rn, N, C, H, W, num_disp, groups, cpg](Node<T>& self) {
        const T* g = self.grad.data();
        const T* pl = ln->value.data();
        const T* pr = rn->value.data();
        const T inv = T(1) / T(cpg);
        for (int n = 0; n < N; ++n)
          for (int gidx = 0; gidx < groups; ++gidx)
            for (int cc = 0; cc < cpg; ++cc) {
              const int c = gidx * cpg + cc;
              const std::int64_t base = (std::int64_t(n) * C + c) * H * W;
              T* glp = ln->requires_grad ? ln->ensure_grad().data() + base : nullptr;
              T* grp = rn->requires_grad ? rn->ensure_grad().data() + base : nullptr;
              const T* lp = pl + base;
              const T* rp = pr + base;
              for (int d = 0; d < num_disp; ++d) {
                const T* gp =
                    g + ((std::int64_t(n) * groups + gidx) * num_disp + d) * H * W;
                for (int h = 0; h < H; ++h) {
                  const T* grow = gp + std::int64_t(h) * W;
                  const T* lrow = lp + std::int64_t(h) * W;
                  const T* rrow = rp + std::int64_t(h) * W;
                  if (glp) {
                    T* q = glp + std::int64_t(h) * W;
#pragma omp simd
                    for (int x = d; x < W; ++x) q[x] += inv * grow[x] * rrow[x - d];
                  }
                  if (grp) {
                    T* q = grp + std::int64_t(h) * W;
#pragma omp simd
                    for (int x = d; x < W; ++x) q[x - d] += inv * grow[x] * lrow[x];
                  }
                }
              }
            }
      });
}

// Contiguous channel groups replaced by their mean: [N,C,D,H,W] -> [N,G,D,H,W].
template <typename T>
Var<T> group_average(const Var<T>& vol, int groups) {
  const auto& s = vol.value().shape();
  if (s.size() != 5) throw InvariantError("group_average: rank");
  const int N = s[0], C = s[1];
  if (groups < 1 || C % groups != 0)
    throw InvariantError("group_average: channel count not divisible by groups");
  const int cpg = C / groups;
  const std::int64_t S = detail::prod(s, 2, 5);
  Tensor<T> y({N, groups, s[2], s[3], s[4]});
  const T* pv = vol.value().data();
  T* py = y.data();
  const T inv = T(1) / T(cpg);
  for (int n = 0; n < N; ++n)
    for (int gidx = 0; gidx < groups; ++gidx) {
      T* q = py + (std::int64_t(n) * groups + gidx) * S;
      for (std::int64_t i = 0; i < S; ++i) q[i] = T(0);
      for (int cc = 0; cc < cpg; ++cc) {
        const T* p = pv + (std::int64_t(n) * C + gidx * cpg + cc) * S;
#pragma omp simd
        for (std::int64_t i = 0; i < S; ++i) q[i] += p[i];
      }
#pragma omp simd
      for (std::int64_t i = 0; i < S; ++i) q[i] *= inv;
    }
  Node<T>* vn = vol.node().get();
  return make_op<T>(std::move(y), {vol}, [vn, N, C, groups, cpg, S](Node<T>& self) {
    if (!vn->requires_grad) return;
    T* gv = vn->ensure_grad().data();
    const T* g = self.grad.data();
    const T inv = T(1) / T(cpg);
    for (int n = 0; n < N; ++n)
      for (int gidx = 0; gidx < groups; ++gidx) {
        const T* gp = g + (std::int64_t(n) * groups + gidx) * S;
        for (int cc = 0; cc < cpg; ++cc) {
          T* q = gv + (std::int64_t(n) * C + gidx * cpg + cc) * S;
#pragma omp simd
          for (std::int64_t i = 0; i < S; ++i) q[i] += inv * gp[i];
        }
      }
  });
}

}  // namespace dva::nn
