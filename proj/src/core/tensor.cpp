#include "ocgvf/core/tensor.hpp"

#include <unordered_map>
#include <unordered_set>

#include "ocgvf/core/ops.hpp"

namespace ocgvf::core {

namespace {
template <typename T>
bool& grad_mode_ref() {
  thread_local bool on = true;
  return on;
}
}  // namespace

template <typename T>
bool grad_mode() {
  return grad_mode_ref<T>();
}

template <typename T>
void set_grad_mode(bool on) {
  grad_mode_ref<T>() = on;
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& s, T v) {
  auto n = std::make_shared<Node<T>>();
  n->shape = s;
  n->data = std::make_shared<std::vector<T>>(numel(s), v);
  n->op = "const";
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& s, std::vector<T> v) {
  if (static_cast<int64_t>(v.size()) != numel(s)) {
    throw ShapeError("Tensor::from: data size " + std::to_string(v.size()) +
                     " does not match shape " + shape_str(s));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = s;
  n->data = std::make_shared<std::vector<T>>(std::move(v));
  n->op = "const";
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::uniform(const Shape& s, Rng& rng, T lo, T hi) {
  std::vector<T> v(numel(s));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return from(s, std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::normal(const Shape& s, Rng& rng, T mean, T stddev) {
  std::vector<T> v(numel(s));
  for (auto& x : v) x = static_cast<T>(rng.normal(mean, stddev));
  return from(s, std::move(v));
}

template <typename T>
T Tensor<T>::item() const {
  if (!defined() || size() != 1) throw ShapeError("item: tensor is not scalar");
  return (*n_->data)[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int> idx) const {
  const Shape& s = n_->shape;
  if (idx.size() != s.size()) throw ShapeError("at: rank mismatch");
  int64_t flat = 0;
  int d = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[d]) throw ShapeError("at: index out of range");
    flat = flat * s[d] + i;
    ++d;
  }
  return (*n_->data)[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!defined()) throw ShapeError("set_requires_grad: undefined tensor");
  if (n_->vjp) throw ShapeError("set_requires_grad: only valid on leaves");
  n_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto n = std::make_shared<Node<T>>();
  n->shape = n_->shape;
  n->data = n_->data;
  n->op = "detach";
  n->aux = n_->aux;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto n = std::make_shared<Node<T>>();
  n->shape = n_->shape;
  n->data = std::make_shared<std::vector<T>>(*n_->data);
  n->op = "clone";
  n->requires_grad = n_->requires_grad;
  n->aux = n_->aux;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs, const char* op,
                  typename Node<T>::Vjp vjp,
                  std::shared_ptr<std::vector<int32_t>> aux) {
  if (static_cast<int64_t>(value.size()) != numel(shape)) {
    throw ShapeError(std::string("make_op(") + op + "): value size " +
                     std::to_string(value.size()) + " vs shape " +
                     shape_str(shape));
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<T>>(std::move(value));
  n->op = op;
  n->aux = std::move(aux);
  bool rg = false;
  if (grad_mode<T>()) {
    for (const auto& in : inputs) rg = rg || in.requires_grad();
  }
  n->requires_grad = rg;
  if (rg) {
    n->inputs = std::move(inputs);
    n->vjp = std::move(vjp);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& out,
                            const std::vector<Tensor<T>>& wrt,
                            bool create_graph) {
  if (!out.defined() || out.size() != 1) {
    throw ShapeError("grad: output must be a defined scalar");
  }

  // Post-order over the subgraph that requires grad: inputs before consumers.
  std::vector<Node<T>*> order;
  std::unordered_map<Node<T>*, Tensor<T>> handle;
  if (out.requires_grad()) {
    struct Frame {
      Tensor<T> t;
      size_t next = 0;
    };
    std::unordered_set<Node<T>*> done;
    std::vector<Frame> stack;
    stack.push_back({out});
    done.insert(out.node());
    while (!stack.empty()) {
      Frame& f = stack.back();
      Node<T>* n = f.t.node();
      bool descended = false;
      while (f.next < n->inputs.size()) {
        const Tensor<T>& in = n->inputs[f.next++];
        if (in.requires_grad() && !done.count(in.node())) {
          done.insert(in.node());
          stack.push_back({in});
          descended = true;
          break;
        }
      }
      if (descended) continue;
      order.push_back(n);
      handle.emplace(n, f.t);
      stack.pop_back();
    }
  }

  std::unordered_map<Node<T>*, Tensor<T>> grads;
  if (out.requires_grad()) {
    grads.emplace(out.node(), Tensor<T>::ones(out.shape()));
    GradModeGuard<T> mode(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      auto git = grads.find(n);
      if (git == grads.end()) continue;
      if (!n->vjp) continue;
      std::vector<Tensor<T>> in_grads = n->vjp(git->second, handle.at(n));
      if (in_grads.size() != n->inputs.size()) {
        throw ShapeError(std::string("grad: vjp arity mismatch in op ") +
                         n->op);
      }
      for (size_t i = 0; i < n->inputs.size(); ++i) {
        const Tensor<T>& in = n->inputs[i];
        if (!in.requires_grad() || !in_grads[i].defined()) continue;
        if (in_grads[i].shape() != in.shape()) {
          throw ShapeError(std::string("grad: vjp shape mismatch in op ") +
                           n->op + ": " + shape_str(in_grads[i].shape()) +
                           " vs " + shape_str(in.shape()));
        }
        auto acc = grads.find(in.node());
        if (acc == grads.end()) {
          grads.emplace(in.node(), in_grads[i]);
        } else {
          acc->second = add(acc->second, in_grads[i]);
        }
      }
    }
  }

  std::vector<Tensor<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    result.push_back(it == grads.end() ? Tensor<T>::zeros(w.shape())
                                       : it->second);
  }
  return result;
}

template bool grad_mode<float>();
template bool grad_mode<double>();
template void set_grad_mode<float>(bool);
template void set_grad_mode<double>(bool);
template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_op<float>(Shape, std::vector<float>,
                                      std::vector<Tensor<float>>, const char*,
                                      Node<float>::Vjp,
                                      std::shared_ptr<std::vector<int32_t>>);
template Tensor<double> make_op<double>(Shape, std::vector<double>,
                                        std::vector<Tensor<double>>,
                                        const char*, Node<double>::Vjp,
                                        std::shared_ptr<std::vector<int32_t>>);
template std::vector<Tensor<float>> grad<float>(const Tensor<float>&,
                                                const std::vector<Tensor<float>>&,
                                                bool);
template std::vector<Tensor<double>> grad<double>(
    const Tensor<double>&, const std::vector<Tensor<double>>&, bool);

}  // namespace ocgvf::core
