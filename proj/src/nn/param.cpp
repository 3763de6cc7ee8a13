#include "ocgvf/nn/param.hpp"

#include <cmath>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/serialize.hpp"

namespace ocgvf::nn {

template <typename T>
core::Tensor<T>& ParamSet<T>::add(const std::string& name,
                                  core::Tensor<T> init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
  init.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({name, std::move(init)});
  return params_.back().value;
}

template <typename T>
bool ParamSet<T>::has(const std::string& name) const {
  return index_.count(name) != 0;
}

template <typename T>
const core::Tensor<T>& ParamSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].value;
}

template <typename T>
std::vector<std::string> ParamSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

template <typename T>
std::vector<core::Tensor<T>> ParamSet<T>::tensors() const {
  std::vector<core::Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

namespace {
bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.size() >= prefix.size() &&
         name.compare(0, prefix.size(), prefix) == 0;
}
}  // namespace

template <typename T>
std::vector<core::Tensor<T>> ParamSet<T>::tensors_prefixed(
    const std::vector<std::string>& prefixes) const {
  std::vector<core::Tensor<T>> out;
  for (const auto& p : params_) {
    for (const auto& pre : prefixes) {
      if (has_prefix(p.name, pre)) {
        out.push_back(p.value);
        break;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<std::string> ParamSet<T>::names_prefixed(
    const std::vector<std::string>& prefixes) const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    for (const auto& pre : prefixes) {
      if (has_prefix(p.name, pre)) {
        out.push_back(p.name);
        break;
      }
    }
  }
  return out;
}

template <typename T>
int64_t ParamSet<T>::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParamSet<T>::copy_from(const ParamSet& src) {
  if (src.params_.size() != params_.size()) {
    throw ConfigError("parameter set size mismatch");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& s = src.params_[i];
    auto& d = params_[i];
    if (s.name != d.name || s.value.shape() != d.value.shape()) {
      throw ConfigError("parameter mismatch at " + d.name);
    }
    d.value.mut_vec() = s.value.vec();
  }
}

template <typename T>
void ParamSet<T>::save(std::ostream& os) const {
  core::write_u64(os, params_.size());
  for (const auto& p : params_) {
    core::write_string(os, p.name);
    core::write_tensor(os, p.value);
  }
}

template <typename T>
void ParamSet<T>::load(std::istream& is) {
  const uint64_t n = core::read_u64(is);
  if (n != params_.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (auto& p : params_) {
    const std::string name = core::read_string(is);
    auto t = core::read_tensor<T>(is);
    if (name != p.name || t.shape() != p.value.shape()) {
      throw ConfigError("checkpoint parameter mismatch at " + p.name);
    }
    p.value.mut_vec() = t.vec();
  }
}

template <typename T>
core::Tensor<T> fanin_uniform(core::Rng& rng, const core::Shape& shape,
                              int64_t fan_in) {
  if (fan_in <= 0) throw ConfigError("fan_in must be positive");
  const T bound = static_cast<T>(std::sqrt(3.0 / static_cast<double>(fan_in)));
  return core::Tensor<T>::uniform(shape, rng, -bound, bound);
}

template class ParamSet<float>;
template class ParamSet<double>;
template core::Tensor<float> fanin_uniform<float>(core::Rng&,
                                                  const core::Shape&, int64_t);
template core::Tensor<double> fanin_uniform<double>(core::Rng&,
                                                    const core::Shape&,
                                                    int64_t);

}  // namespace ocgvf::nn
