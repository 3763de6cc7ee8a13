#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ocgvf/core/rng.hpp"
#include "ocgvf/core/tensor.hpp"

namespace ocgvf::nn {

template <typename T>
struct Param {
  std::string name;
  core::Tensor<T> value;
};

// Named trainable leaves. Insertion order is the canonical parameter order
// (optimizer slots, checkpoints, gradient lists all follow it).
template <typename T>
class ParamSet {
 public:
  core::Tensor<T>& add(const std::string& name, core::Tensor<T> init);
  bool has(const std::string& name) const;
  const core::Tensor<T>& at(const std::string& name) const;
  const std::vector<Param<T>>& all() const { return params_; }
  std::vector<std::string> names() const;
  std::vector<core::Tensor<T>> tensors() const;
  // Parameters whose name starts with any of the given prefixes.
  std::vector<core::Tensor<T>> tensors_prefixed(
      const std::vector<std::string>& prefixes) const;
  std::vector<std::string> names_prefixed(
      const std::vector<std::string>& prefixes) const;
  int64_t scalar_count() const;

  // Hard copy of values from a set with identical names and shapes. Keeps
  // tensor identities, so optimizer bindings stay valid.
  void copy_from(const ParamSet& src);

  void save(std::ostream& os) const;
  void load(std::istream& is);  // names and shapes must match

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, size_t> index_;
};

// Read access over a ParamSet with an optional replacement map. The meta
// unroll evaluates the network at hypothetical parameter values (graph nodes
// derived from inner updates) by overlaying the tracked subset.
template <typename T>
class ParamView {
 public:
  ParamView(const ParamSet<T>& base) : base_(&base) {}  // NOLINT: implicit
  ParamView(const ParamSet<T>& base,
            const std::map<std::string, core::Tensor<T>>& overlay)
      : base_(&base), overlay_(&overlay) {}

  const core::Tensor<T>& operator[](const std::string& name) const {
    if (overlay_ != nullptr) {
      auto it = overlay_->find(name);
      if (it != overlay_->end()) return it->second;
    }
    return base_->at(name);
  }

 private:
  const ParamSet<T>* base_;
  const std::map<std::string, core::Tensor<T>>* overlay_ = nullptr;
};

// Uniform with variance 1/fan_in; the project-wide weight initializer.
template <typename T>
core::Tensor<T> fanin_uniform(core::Rng& rng, const core::Shape& shape,
                              int64_t fan_in);

}  // namespace ocgvf::nn
