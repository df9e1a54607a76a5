#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dvanet/nn/autograd.hpp"

namespace dva::nn {

// Owner of parameters (leaf Vars) and buffers (running statistics). Names
// are hierarchical ("backbone.stem1.w") and drive checkpoint layout.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void set_training(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->set_training(on);
  }
  bool training() const { return training_; }

  void collect_parameters(const std::string& prefix,
                          std::vector<std::pair<std::string, Var<T>*>>& out) {
    for (auto& [name, p] : params_) out.push_back({prefix + name, p.get()});
    for (auto& [name, child] : children_)
      child->collect_parameters(prefix + name + ".", out);
  }

  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    for (auto& [name, b] : buffers_) out.push_back({prefix + name, b.get()});
    for (auto& [name, child] : children_)
      child->collect_buffers(prefix + name + ".", out);
  }

  std::vector<std::pair<std::string, Var<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Var<T>*>> out;
    collect_parameters("", out);
    return out;
  }

  std::vector<Var<T>*> parameters() {
    std::vector<Var<T>*> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : parameters()) n += p->value().size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

 protected:
  Var<T>& register_param(const std::string& name, Tensor<T> init) {
    params_.emplace_back(name, std::make_unique<Var<T>>(std::move(init), true));
    return *params_.back().second;
  }
  Tensor<T>& register_buffer(const std::string& name, Tensor<T> init) {
    buffers_.emplace_back(name, std::make_unique<Tensor<T>>(std::move(init)));
    return *buffers_.back().second;
  }
  void register_child(const std::string& name, Module<T>& child) {
    children_.push_back({name, &child});
  }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Var<T>>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>> buffers_;
  std::vector<std::pair<std::string, Module<T>*>> children_;
  bool training_ = true;
};

}  // namespace dva::nn
