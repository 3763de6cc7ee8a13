#include "ocgvf/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/serialize.hpp"

namespace ocgvf::nn {

template <typename T>
Adam<T>::Adam(std::vector<core::Tensor<T>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0 || cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 ||
      cfg_.beta2 >= 1 || cfg_.eps <= 0) {
    throw ConfigError("invalid optimizer configuration");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.size()), T(0));
    v_.emplace_back(static_cast<size_t>(p.size()), T(0));
  }
}

template <typename T>
void Adam<T>::step(const std::vector<core::Tensor<T>>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("gradient count mismatch");
  }
  ++t_;
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T lr = static_cast<T>(cfg_.lr);
  const T eps = static_cast<T>(cfg_.eps);
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, t_));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].shape() != params_[i].shape()) {
      throw std::invalid_argument("gradient shape mismatch");
    }
    const auto& g = grads[i].vec();
    auto& p = params_[i].mut_vec();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::save(std::ostream& os) const {
  core::write_i64(os, t_);
  core::write_f64(os, cfg_.lr);
  core::write_u64(os, m_.size());
  for (size_t i = 0; i < m_.size(); ++i) {
    core::write_pod_vec(os, m_[i]);
    core::write_pod_vec(os, v_[i]);
  }
}

template <typename T>
void Adam<T>::load(std::istream& is) {
  t_ = core::read_i64(is);
  cfg_.lr = core::read_f64(is);
  const uint64_t n = core::read_u64(is);
  if (n != m_.size()) throw ConfigError("optimizer checkpoint mismatch");
  for (size_t i = 0; i < n; ++i) {
    auto m = core::read_pod_vec<T>(is);
    auto v = core::read_pod_vec<T>(is);
    if (m.size() != m_[i].size() || v.size() != v_[i].size()) {
      throw ConfigError("optimizer moment size mismatch");
    }
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ocgvf::nn
