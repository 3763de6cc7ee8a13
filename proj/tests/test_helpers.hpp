#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ocgvf/core/ops.hpp"
#include "ocgvf/core/tensor.hpp"

namespace ocgvf::test {

using core::Tensor;

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a.data()[i]) -
                              static_cast<double>(b.data()[i])));
  }
  return m;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, rel_err(a.data()[i], b.data()[i]));
  }
  return m;
}

// Central-difference check of d f / d leaves against reverse-mode grads.
// `f` must rebuild its graph from the leaves' current contents on each call.
inline double gradcheck(
    const std::function<Tensor<double>()>& f,
    std::vector<Tensor<double>> leaves, double eps = 1e-6) {
  Tensor<double> out = f();
  auto analytic = core::grad(out, leaves);
  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (int64_t i = 0; i < leaf.size(); ++i) {
      const double orig = leaf.data()[i];
      leaf.mut_data()[i] = orig + eps;
      const double fp = f().item();
      leaf.mut_data()[i] = orig - eps;
      const double fm = f().item();
      leaf.mut_data()[i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      worst = std::max(worst, rel_err(numeric, analytic[li].data()[i]));
    }
  }
  return worst;
}

}  // namespace ocgvf::test
