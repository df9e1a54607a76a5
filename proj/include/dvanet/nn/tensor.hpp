#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "dvanet/core/errors.hpp"
#include "dvanet/core/random.hpp"

namespace dva::nn {

// Dense row-major tensor. Shapes are small (<= 5 dims); kernels index raw
// data with precomputed strides, so no stride state is kept here.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) { reset(std::move(shape)); }
  Tensor(std::initializer_list<int> shape) { reset(std::vector<int>(shape)); }

  void reset(std::vector<int> shape) {
    std::int64_t n = shape.empty() ? 0 : 1;
    for (int d : shape) {
      if (d <= 0) throw InvariantError("tensor: non-positive dimension");
      n *= d;
    }
    shape_ = std::move(shape);
    data_.assign(std::size_t(n), T(0));
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[std::size_t(i)]; }
  int ndim() const { return int(shape_.size()); }
  std::int64_t size() const { return std::int64_t(data_.size()); }
  bool defined() const { return !shape_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
  const T& operator[](std::int64_t i) const { return data_[std::size_t(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  void fill_uniform(Rng& rng, T lo, T hi) {
    for (auto& x : data_) x = T(rng.uniform(double(lo), double(hi)));
  }

  void fill_normal(Rng& rng, T mean, T stddev) {
    for (auto& x : data_) x = T(rng.normal(double(mean), double(stddev)));
  }

  std::string shape_string() const {
    std::string s = "[";
    for (int i = 0; i < ndim(); ++i)
      s += (i ? "," : "") + std::to_string(shape_[std::size_t(i)]);
    return s + "]";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = U(data_[std::size_t(i)]);
    return out;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
void check_shape(const Tensor<T>& t, const std::vector<int>& expect,
                 const char* what) {
  if (t.shape() != expect)
    throw InvariantError(std::string(what) + ": expected shape mismatch, got " +
                         t.shape_string());
}

}  // namespace dva::nn
