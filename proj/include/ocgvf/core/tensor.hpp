#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/rng.hpp"
#include "ocgvf/core/shape.hpp"

namespace ocgvf::core {

// Reverse-mode autodiff over dense tensors. A Tensor is a cheap handle to a
// graph node; ops (see ops.hpp) build nodes whose vjp closures are themselves
// expressed with ops, so backward passes can be differentiated again
// (create_graph) to any order.

template <typename T>
class Tensor;

// When false, ops do not record graph structure. Thread local.
template <typename T>
bool grad_mode();
template <typename T>
void set_grad_mode(bool on);

template <typename T>
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode<T>()) { set_grad_mode<T>(false); }
  ~NoGradGuard() { set_grad_mode<T>(prev); }
};

template <typename T>
struct GradModeGuard {
  bool prev;
  explicit GradModeGuard(bool on) : prev(grad_mode<T>()) {
    set_grad_mode<T>(on);
  }
  ~GradModeGuard() { set_grad_mode<T>(prev); }
};

template <typename T>
struct Node {
  using Vjp = std::function<std::vector<Tensor<T>>(const Tensor<T>& upstream,
                                                   const Tensor<T>& self)>;
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  bool requires_grad = false;
  std::vector<Tensor<T>> inputs;
  Vjp vjp;  // empty for leaves and constants
  const char* op = "";
  // Saved integer payload (pooling argmax, gather indices).
  std::shared_ptr<std::vector<int32_t>> aux;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  // --- Factories ---
  static Tensor zeros(const Shape& s) { return full(s, T(0)); }
  static Tensor ones(const Shape& s) { return full(s, T(1)); }
  static Tensor full(const Shape& s, T v);
  static Tensor scalar(T v) { return full({1}, v); }
  static Tensor from(const Shape& s, std::vector<T> v);
  static Tensor uniform(const Shape& s, Rng& rng, T lo, T hi);
  static Tensor normal(const Shape& s, Rng& rng, T mean, T stddev);
  static Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }
  static Tensor ones_like(const Tensor& t) { return ones(t.shape()); }

  // --- Introspection ---
  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t size() const { return numel(n_->shape); }
  const char* op() const { return n_->op; }
  bool requires_grad() const { return defined() && n_->requires_grad; }
  bool is_leaf() const { return defined() && !n_->vjp; }
  Node<T>* node() const { return n_.get(); }

  // --- Data access ---
  const T* data() const { return n_->data->data(); }
  T* mut_data() { return n_->data->data(); }
  const std::vector<T>& vec() const { return *n_->data; }
  std::vector<T>& mut_vec() { return *n_->data; }
  T item() const;
  T at(std::initializer_list<int> idx) const;

  // Marks a leaf as differentiable; only valid on graph roots.
  Tensor& set_requires_grad(bool on = true);

  // Value-sharing constant view (drops graph history).
  Tensor detach() const;
  // Deep copy as a fresh leaf.
  Tensor clone() const;

  // Convert element type (fresh constant leaf).
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    const T* src = data();
    for (int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>::from(shape(), std::move(out));
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

// Builds an op node. requires_grad is inferred from inputs and grad mode; if
// the result does not require grad, inputs and vjp are dropped.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs, const char* op,
                  typename Node<T>::Vjp vjp,
                  std::shared_ptr<std::vector<int32_t>> aux = nullptr);

// d out / d wrt. `out` must be a scalar. Returns one tensor per wrt entry;
// entries of wrt the output does not depend on yield exact zeros. With
// create_graph the returned grads carry history and can be differentiated.
template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& out,
                            const std::vector<Tensor<T>>& wrt,
                            bool create_graph = false);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ocgvf::core
