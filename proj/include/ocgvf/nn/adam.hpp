#pragma once

#include <cstdint>
#include <iostream>
#include <vector>

#include "ocgvf/core/tensor.hpp"

namespace ocgvf::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer with bias correction. Updates the bound
// parameter tensors in place; moment state is serializable for exact resume.
template <typename T>
class Adam {
 public:
  Adam(std::vector<core::Tensor<T>> params, AdamConfig cfg = {});

  // grads[i] pairs with the i-th bound parameter.
  void step(const std::vector<core::Tensor<T>>& grads);

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  int64_t updates() const { return t_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  std::vector<core::Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace ocgvf::nn
