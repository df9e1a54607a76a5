#pragma once

#include <cmath>
#include <vector>

#include "dvanet/nn/autograd.hpp"

namespace dva::nn {

// AdamW with decoupled weight decay.
template <typename T>
class AdamW {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW(std::vector<Var<T>*> params, Config cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.emplace_back(p->value().shape());
      v_.emplace_back(p->value().shape());
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t step_count() const { return step_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k]->value();
      auto& g = params_[k]->grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::int64_t i = 0; i < p.size(); ++i) {
        const double gi = double(g[i]);
        const double mi = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = T(mi);
        v[i] = T(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p[i] = T(double(p[i]) -
                 cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                            cfg_.weight_decay * double(p[i])));
      }
    }
  }

  // state exposure for checkpointing
  std::vector<Tensor<T>>& moment1() { return m_; }
  std::vector<Tensor<T>>& moment2() { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  std::vector<Var<T>*> params_;
  Config cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t step_ = 0;
};

}  // namespace dva::nn
