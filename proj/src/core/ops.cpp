#include "ocgvf/core/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ocgvf::core {

namespace {

template <typename F>
inline void par_for(int64_t n, F&& f) {
#pragma omp parallel for schedule(static) if (n > (1 << 15))
  for (int64_t i = 0; i < n; ++i) f(i);
}

template <typename T>
void need_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void need_rank(const Tensor<T>& a, int rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

// Scalar broadcast pair used by sum_all's vjp.
template <typename T>
Tensor<T> bcast_scalar(const Tensor<T>& s, Shape shape) {
  if (s.size() != 1) throw ShapeError("bcast_scalar: source must be scalar");
  std::vector<T> out(numel(shape), s.data()[0]);
  return make_op<T>(std::move(shape), std::move(out), {s}, "bcast_scalar",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{sum_all(u)};
                    });
}

template <typename T>
Tensor<T> maxunpool2(const Tensor<T>& g, std::shared_ptr<std::vector<int32_t>> idx,
                     int h, int w);

template <typename T>
Tensor<T> maxtake2(const Tensor<T>& x, std::shared_ptr<std::vector<int32_t>> idx);

template <typename T>
Tensor<T> maxunpool2(const Tensor<T>& g, std::shared_ptr<std::vector<int32_t>> idx,
                     int h, int w) {
  need_rank(g, 4, "maxunpool2");
  const int n = g.dim(0), c = g.dim(1);
  std::vector<T> out(static_cast<int64_t>(n) * c * h * w);
  kernels::maxpool2_scatter(n, c, h, w, g.data(), idx->data(), out.data());
  return make_op<T>({n, c, h, w}, std::move(out), {g}, "maxunpool2",
                    [idx](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{maxtake2(u, idx)};
                    },
                    idx);
}

template <typename T>
Tensor<T> maxtake2(const Tensor<T>& x, std::shared_ptr<std::vector<int32_t>> idx) {
  need_rank(x, 4, "maxtake2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(static_cast<int64_t>(n) * c * (h / 2) * (w / 2));
  kernels::maxpool2_gather(n, c, h, w, x.data(), idx->data(), out.data());
  return make_op<T>({n, c, h / 2, w / 2}, std::move(out), {x}, "maxtake2",
                    [idx, h, w](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{maxunpool2(u, idx, h, w)};
                    },
                    idx);
}

}  // namespace

// --- Elementwise ---

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  need_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  const T* pa = a.data();
  const T* pb = b.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] + pb[i]; });
  return make_op<T>(a.shape(), std::move(out), {a, b}, "add",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{u, u};
                    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  need_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  const T* pa = a.data();
  const T* pb = b.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] - pb[i]; });
  return make_op<T>(a.shape(), std::move(out), {a, b}, "sub",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{u, neg(u)};
                    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  need_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  const T* pa = a.data();
  const T* pb = b.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] * pb[i]; });
  return make_op<T>(a.shape(), std::move(out), {a, b}, "mul",
                    [a, b](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{mul(u, b), mul(u, a)};
                    });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  need_same_shape(a, b, "div");
  std::vector<T> out(a.size());
  const T* pa = a.data();
  const T* pb = b.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] / pb[i]; });
  return make_op<T>(a.shape(), std::move(out), {a, b}, "div",
                    [b](const Tensor<T>& u, const Tensor<T>& self) {
                      Tensor<T> da = div(u, b);
                      Tensor<T> db = neg(div(mul(u, self), b));
                      return std::vector<Tensor<T>>{da, db};
                    });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = -pa[i]; });
  return make_op<T>(a.shape(), std::move(out), {a}, "neg",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{neg(u)};
                    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] * s; });
  return make_op<T>(a.shape(), std::move(out), {a}, "scale",
                    [s](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{scale(u, s)};
                    });
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] + s; });
  return make_op<T>(a.shape(), std::move(out), {a}, "add_const",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{u};
                    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] > T(0) ? pa[i] : T(0); });
  return make_op<T>(a.shape(), std::move(out), {a}, "relu",
                    [a](const Tensor<T>& u, const Tensor<T>&) {
                      std::vector<T> m(a.size());
                      const T* p = a.data();
                      par_for(a.size(), [&](int64_t i) {
                        m[i] = p[i] > T(0) ? T(1) : T(0);
                      });
                      Tensor<T> mask = Tensor<T>::from(a.shape(), std::move(m));
                      return std::vector<Tensor<T>>{mul(u, mask)};
                    });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = std::tanh(pa[i]); });
  return make_op<T>(a.shape(), std::move(out), {a}, "tanh",
                    [](const Tensor<T>& u, const Tensor<T>& self) {
                      Tensor<T> one = Tensor<T>::ones_like(self);
                      return std::vector<Tensor<T>>{
                          mul(u, sub(one, square(self)))};
                    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) {
    out[i] = pa[i] >= T(0) ? T(1) / (T(1) + std::exp(-pa[i]))
                           : std::exp(pa[i]) / (T(1) + std::exp(pa[i]));
  });
  return make_op<T>(a.shape(), std::move(out), {a}, "sigmoid",
                    [](const Tensor<T>& u, const Tensor<T>& self) {
                      Tensor<T> one = Tensor<T>::ones_like(self);
                      return std::vector<Tensor<T>>{
                          mul(u, mul(self, sub(one, self)))};
                    });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = std::exp(pa[i]); });
  return make_op<T>(a.shape(), std::move(out), {a}, "exp",
                    [](const Tensor<T>& u, const Tensor<T>& self) {
                      return std::vector<Tensor<T>>{mul(u, self)};
                    });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = std::sqrt(pa[i]); });
  return make_op<T>(a.shape(), std::move(out), {a}, "sqrt",
                    [](const Tensor<T>& u, const Tensor<T>& self) {
                      Tensor<T> half = div(Tensor<T>::full(self.shape(), T(0.5)),
                                           self);
                      return std::vector<Tensor<T>>{mul(u, half)};
                    });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) { out[i] = pa[i] * pa[i]; });
  return make_op<T>(a.shape(), std::move(out), {a}, "square",
                    [a](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{mul(u, scale(a, T(2)))};
                    });
}

// --- Reductions and broadcasts ---

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = 0;
  const T* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  Shape s = a.shape();
  return make_op<T>({1}, {acc}, {a}, "sum_all",
                    [s](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{bcast_scalar(u, s)};
                    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  need_rank(a, 2, "row_sum");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r, T(0));
  const T* pa = a.data();
  for (int i = 0; i < r; ++i) {
    T acc = 0;
    for (int j = 0; j < c; ++j) acc += pa[static_cast<int64_t>(i) * c + j];
    out[i] = acc;
  }
  return make_op<T>({r}, std::move(out), {a}, "row_sum",
                    [c](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{expand_to_cols(u, c)};
                    });
}

template <typename T>
Tensor<T> col_sum(const Tensor<T>& a) {
  need_rank(a, 2, "col_sum");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(c, T(0));
  const T* pa = a.data();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[j] += pa[static_cast<int64_t>(i) * c + j];
  }
  return make_op<T>({c}, std::move(out), {a}, "col_sum",
                    [r](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{expand_to_rows(u, r)};
                    });
}

template <typename T>
Tensor<T> expand_to_cols(const Tensor<T>& v, int cols) {
  need_rank(v, 1, "expand_to_cols");
  const int r = v.dim(0);
  std::vector<T> out(static_cast<int64_t>(r) * cols);
  const T* pv = v.data();
  par_for(static_cast<int64_t>(r) * cols,
          [&](int64_t i) { out[i] = pv[i / cols]; });
  return make_op<T>({r, cols}, std::move(out), {v}, "expand_to_cols",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{row_sum(u)};
                    });
}

template <typename T>
Tensor<T> expand_to_rows(const Tensor<T>& v, int rows) {
  need_rank(v, 1, "expand_to_rows");
  const int c = v.dim(0);
  std::vector<T> out(static_cast<int64_t>(rows) * c);
  const T* pv = v.data();
  par_for(static_cast<int64_t>(rows) * c,
          [&](int64_t i) { out[i] = pv[i % c]; });
  return make_op<T>({rows, c}, std::move(out), {v}, "expand_to_rows",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{col_sum(u)};
                    });
}

template <typename T>
Tensor<T> sum_axis1(const Tensor<T>& a) {
  need_rank(a, 3, "sum_axis1");
  const int b = a.dim(0), k = a.dim(1), m = a.dim(2);
  std::vector<T> out(static_cast<int64_t>(b) * m, T(0));
  const T* pa = a.data();
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < k; ++j) {
      const T* src = pa + (static_cast<int64_t>(i) * k + j) * m;
      T* dst = out.data() + static_cast<int64_t>(i) * m;
      for (int p = 0; p < m; ++p) dst[p] += src[p];
    }
  }
  return make_op<T>({b, m}, std::move(out), {a}, "sum_axis1",
                    [k](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{expand_axis1(u, k)};
                    });
}

template <typename T>
Tensor<T> expand_axis1(const Tensor<T>& a, int k) {
  need_rank(a, 2, "expand_axis1");
  const int b = a.dim(0), m = a.dim(1);
  std::vector<T> out(static_cast<int64_t>(b) * k * m);
  const T* pa = a.data();
  par_for(static_cast<int64_t>(b) * k * m, [&](int64_t i) {
    const int64_t p = i % m;
    const int64_t bi = i / (static_cast<int64_t>(k) * m);
    out[i] = pa[bi * m + p];
  });
  return make_op<T>({b, k, m}, std::move(out), {a}, "expand_axis1",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{sum_axis1(u)};
                    });
}

template <typename T>
Tensor<T> batch_bcast(const Tensor<T>& a, int n) {
  const int64_t m = a.size();
  std::vector<T> out(static_cast<int64_t>(n) * m);
  const T* pa = a.data();
  par_for(static_cast<int64_t>(n) * m, [&](int64_t i) { out[i] = pa[i % m]; });
  Shape s;
  s.push_back(n);
  for (int d : a.shape()) s.push_back(d);
  return make_op<T>(std::move(s), std::move(out), {a}, "batch_bcast",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{sum_batch(u)};
                    });
}

template <typename T>
Tensor<T> sum_batch(const Tensor<T>& a) {
  if (a.rank() < 2) throw ShapeError("sum_batch: rank must be >= 2");
  const int n = a.dim(0);
  const int64_t m = a.size() / n;
  std::vector<T> out(m, T(0));
  const T* pa = a.data();
  for (int i = 0; i < n; ++i) {
    const T* src = pa + static_cast<int64_t>(i) * m;
    for (int64_t j = 0; j < m; ++j) out[j] += src[j];
  }
  Shape s(a.shape().begin() + 1, a.shape().end());
  return make_op<T>(std::move(s), std::move(out), {a}, "sum_batch",
                    [n](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{batch_bcast(u, n)};
                    });
}

// --- Shaping ---

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  if (numel(s) != a.size()) {
    throw ShapeError("reshape: numel mismatch " + shape_str(a.shape()) +
                     " -> " + shape_str(s));
  }
  Shape orig = a.shape();
  std::vector<T> out(a.vec());
  return make_op<T>(std::move(s), std::move(out), {a}, "reshape",
                    [orig](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{reshape(u, orig)};
                    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  need_rank(a, 2, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) {
    const int64_t j = i / r, k = i % r;
    out[i] = pa[k * c + j];
  });
  return make_op<T>({c, r}, std::move(out), {a}, "transpose",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{transpose(u)};
                    });
}

template <typename T>
Tensor<T> nchw_to_nlc(const Tensor<T>& a) {
  need_rank(a, 4, "nchw_to_nlc");
  const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const int64_t l = static_cast<int64_t>(h) * w;
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) {
    const int64_t b = i / (l * c), r = i % (l * c);
    const int64_t p = r / c, ch = r % c;
    out[i] = pa[(b * c + ch) * l + p];
  });
  return make_op<T>({n, static_cast<int>(l), c}, std::move(out), {a},
                    "nchw_to_nlc",
                    [h, w](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{nlc_to_nchw(u, h, w)};
                    });
}

template <typename T>
Tensor<T> nlc_to_nchw(const Tensor<T>& a, int h, int w) {
  need_rank(a, 3, "nlc_to_nchw");
  const int n = a.dim(0), c = a.dim(2);
  const int64_t l = static_cast<int64_t>(h) * w;
  if (a.dim(1) != l) {
    throw ShapeError("nlc_to_nchw: positions " + shape_str(a.shape()) +
                     " vs " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<T> out(a.size());
  const T* pa = a.data();
  par_for(a.size(), [&](int64_t i) {
    const int64_t b = i / (l * c), r = i % (l * c);
    const int64_t ch = r / l, p = r % l;
    out[i] = pa[(b * l + p) * c + ch];
  });
  return make_op<T>({n, c, h, w}, std::move(out), {a}, "nlc_to_nchw",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{nchw_to_nlc(u)};
                    });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input");
  const int r = xs[0].dim(0);
  int total = 0;
  std::vector<int> widths;
  for (const auto& x : xs) {
    need_rank(x, 2, "concat_cols");
    if (x.dim(0) != r) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(x.dim(1));
    total += x.dim(1);
  }
  std::vector<T> out(static_cast<int64_t>(r) * total);
  int off = 0;
  for (size_t t = 0; t < xs.size(); ++t) {
    const T* px = xs[t].data();
    const int c = widths[t];
    for (int i = 0; i < r; ++i) {
      std::copy(px + static_cast<int64_t>(i) * c,
                px + static_cast<int64_t>(i + 1) * c,
                out.begin() + static_cast<int64_t>(i) * total + off);
    }
    off += c;
  }
  return make_op<T>({r, total}, std::move(out), xs, "concat_cols",
                    [widths](const Tensor<T>& u, const Tensor<T>&) {
                      std::vector<Tensor<T>> grads;
                      int off2 = 0;
                      for (int c : widths) {
                        grads.push_back(slice_cols(u, off2, c));
                        off2 += c;
                      }
                      return grads;
                    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int start, int len) {
  need_rank(a, 2, "slice_cols");
  const int r = a.dim(0), c = a.dim(1);
  if (start < 0 || len < 0 || start + len > c) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  std::vector<T> out(static_cast<int64_t>(r) * len);
  const T* pa = a.data();
  for (int i = 0; i < r; ++i) {
    std::copy(pa + static_cast<int64_t>(i) * c + start,
              pa + static_cast<int64_t>(i) * c + start + len,
              out.begin() + static_cast<int64_t>(i) * len);
  }
  return make_op<T>(
      {r, len}, std::move(out), {a}, "slice_cols",
      [start, len, r, c](const Tensor<T>& u, const Tensor<T>&) {
        std::vector<Tensor<T>> parts;
        if (start > 0) parts.push_back(Tensor<T>::zeros({r, start}));
        parts.push_back(u);
        if (start + len < c) {
          parts.push_back(Tensor<T>::zeros({r, c - start - len}));
        }
        return std::vector<Tensor<T>>{concat_cols(parts)};
      });
}

// --- Indexing ---

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int32_t>& idx) {
  need_rank(a, 2, "gather_rows");
  const int r = a.dim(0), c = a.dim(1);
  const int n = static_cast<int>(idx.size());
  std::vector<T> out(static_cast<int64_t>(n) * c);
  const T* pa = a.data();
  for (int i = 0; i < n; ++i) {
    const int32_t j = idx[i];
    if (j < 0 || j >= r) throw ShapeError("gather_rows: index out of range");
    std::copy(pa + static_cast<int64_t>(j) * c,
              pa + static_cast<int64_t>(j + 1) * c,
              out.begin() + static_cast<int64_t>(i) * c);
  }
  return make_op<T>({n, c}, std::move(out), {a}, "gather_rows",
                    [idx, r](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{scatter_rows(u, idx, r)};
                    });
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, const std::vector<int32_t>& idx,
                       int rows) {
  need_rank(a, 2, "scatter_rows");
  const int n = a.dim(0), c = a.dim(1);
  if (static_cast<int>(idx.size()) != n) {
    throw ShapeError("scatter_rows: index count mismatch");
  }
  std::vector<T> out(static_cast<int64_t>(rows) * c, T(0));
  const T* pa = a.data();
  for (int i = 0; i < n; ++i) {
    const int32_t j = idx[i];
    if (j < 0 || j >= rows) throw ShapeError("scatter_rows: index out of range");
    for (int p = 0; p < c; ++p) {
      out[static_cast<int64_t>(j) * c + p] += pa[static_cast<int64_t>(i) * c + p];
    }
  }
  return make_op<T>({rows, c}, std::move(out), {a}, "scatter_rows",
                    [idx](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{gather_rows(u, idx)};
                    });
}

template <typename T>
Tensor<T> select_actions(const Tensor<T>& q, const std::vector<int32_t>& a) {
  need_rank(q, 2, "select_actions");
  const int b = q.dim(0), na = q.dim(1);
  if (static_cast<int>(a.size()) != b) {
    throw ShapeError("select_actions: action count mismatch");
  }
  std::vector<T> out(b);
  const T* pq = q.data();
  for (int i = 0; i < b; ++i) {
    if (a[i] < 0 || a[i] >= na) {
      throw ShapeError("select_actions: action out of range");
    }
    out[i] = pq[static_cast<int64_t>(i) * na + a[i]];
  }
  return make_op<T>({b}, std::move(out), {q}, "select_actions",
                    [a, na](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{scatter_actions(u, a, na)};
                    });
}

template <typename T>
Tensor<T> scatter_actions(const Tensor<T>& v, const std::vector<int32_t>& a,
                          int num_actions) {
  need_rank(v, 1, "scatter_actions");
  const int b = v.dim(0);
  if (static_cast<int>(a.size()) != b) {
    throw ShapeError("scatter_actions: action count mismatch");
  }
  std::vector<T> out(static_cast<int64_t>(b) * num_actions, T(0));
  const T* pv = v.data();
  for (int i = 0; i < b; ++i) {
    out[static_cast<int64_t>(i) * num_actions + a[i]] = pv[i];
  }
  return make_op<T>({b, num_actions}, std::move(out), {v}, "scatter_actions",
                    [a](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{select_actions(u, a)};
                    });
}

// --- Softmax ---

namespace {

// exp(x - max) normalized by a descending-sorted sum: permuting the softmax
// axis permutes outputs with bitwise-identical values.
template <typename T>
void softmax_span(const T* x, int64_t n, int64_t stride, T* y,
                  std::vector<T>& tmp) {
  T m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i * stride]);
  tmp.resize(n);
  for (int64_t i = 0; i < n; ++i) tmp[i] = std::exp(x[i * stride] - m);
  std::vector<T> sorted(tmp);
  std::sort(sorted.begin(), sorted.end(), std::greater<T>());
  T denom = 0;
  for (T v : sorted) denom += v;
  for (int64_t i = 0; i < n; ++i) y[i * stride] = tmp[i] / denom;
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  need_rank(a, 2, "softmax_rows");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(a.size());
  const T* pa = a.data();
  std::vector<T> tmp;
  for (int i = 0; i < r; ++i) {
    softmax_span(pa + static_cast<int64_t>(i) * c, c, 1,
                 out.data() + static_cast<int64_t>(i) * c, tmp);
  }
  return make_op<T>(a.shape(), std::move(out), {a}, "softmax_rows",
                    [c](const Tensor<T>& u, const Tensor<T>& self) {
                      Tensor<T> dot = row_sum(mul(u, self));
                      return std::vector<Tensor<T>>{
                          mul(self, sub(u, expand_to_cols(dot, c)))};
                    });
}

template <typename T>
Tensor<T> softmax_axis1(const Tensor<T>& a) {
  need_rank(a, 3, "softmax_axis1");
  const int b = a.dim(0), k = a.dim(1), m = a.dim(2);
  std::vector<T> out(a.size());
  const T* pa = a.data();
  std::vector<T> tmp;
  for (int i = 0; i < b; ++i) {
    for (int p = 0; p < m; ++p) {
      const int64_t base = static_cast<int64_t>(i) * k * m + p;
      softmax_span(pa + base, k, m, out.data() + base, tmp);
    }
  }
  return make_op<T>(a.shape(), std::move(out), {a}, "softmax_axis1",
                    [k](const Tensor<T>& u, const Tensor<T>& self) {
                      Tensor<T> dot = sum_axis1(mul(u, self));
                      return std::vector<Tensor<T>>{
                          mul(self, sub(u, expand_axis1(dot, k)))};
                    });
}

// --- Linear algebra ---

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  need_rank(a, 2, "matmul");
  need_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(static_cast<int64_t>(m) * n);
  kernels::gemm<T>(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0),
                   out.data(), n);
  return make_op<T>({m, n}, std::move(out), {a, b}, "matmul",
                    [a, b](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{matmul(u, transpose(b)),
                                                    matmul(transpose(a), u)};
                    });
}

namespace {

template <typename T>
std::vector<T> batched_gemm(bool ta, bool tb, int nb, int m, int n, int k,
                            const Tensor<T>& a, const Tensor<T>& b) {
  std::vector<T> out(static_cast<int64_t>(nb) * m * n);
  const int64_t sa = a.size() / nb, sb = b.size() / nb;
  const int lda = ta ? m : k, ldb = tb ? k : n;
  for (int i = 0; i < nb; ++i) {
    kernels::gemm<T>(ta, tb, m, n, k, T(1), a.data() + i * sa, lda,
                     b.data() + i * sb, ldb, T(0),
                     out.data() + static_cast<int64_t>(i) * m * n, n);
  }
  return out;
}

template <typename T>
void need_batch3(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  need_rank(a, 3, who);
  need_rank(b, 3, who);
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError(std::string(who) + ": batch dims " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  need_batch3(a, b, "bmm");
  const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(1) != k) {
    throw ShapeError("bmm: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  return make_op<T>({nb, m, n}, batched_gemm(false, false, nb, m, n, k, a, b),
                    {a, b}, "bmm",
                    [a, b](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{bmm_nt(u, b), bmm_tn(a, u)};
                    });
}

template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
  need_batch3(a, b, "bmm_nt");
  const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  if (b.dim(2) != k) {
    throw ShapeError("bmm_nt: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  return make_op<T>({nb, m, n}, batched_gemm(false, true, nb, m, n, k, a, b),
                    {a, b}, "bmm_nt",
                    [a, b](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{bmm(u, b), bmm_tn(u, a)};
                    });
}

template <typename T>
Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b) {
  need_batch3(a, b, "bmm_tn");
  const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(1) != m) {
    throw ShapeError("bmm_tn: inner dims " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  return make_op<T>({nb, k, n}, batched_gemm(true, false, nb, k, n, m, a, b),
                    {a, b}, "bmm_tn",
                    [a, b](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{bmm_nt(b, u), bmm(a, u)};
                    });
}

// --- Convolution family ---

ConvGeom same_conv_geom(int b, int ic, int h, int w, int oc, int k, int s) {
  ConvGeom g;
  g.B = b;
  g.IC = ic;
  g.H = h;
  g.W = w;
  g.OC = oc;
  g.KH = g.KW = k;
  g.SH = g.SW = s;
  const int oh = (h + s - 1) / s;
  const int ow = (w + s - 1) / s;
  const int pad_h = std::max((oh - 1) * s + k - h, 0);
  const int pad_w = std::max((ow - 1) * s + k - w, 0);
  g.PHB = pad_h / 2;
  g.PHE = pad_h - g.PHB;
  g.PWB = pad_w / 2;
  g.PWE = pad_w - g.PWB;
  return g;
}

ConvGeom valid_conv_geom(int b, int ic, int h, int w, int oc, int k, int s) {
  ConvGeom g;
  g.B = b;
  g.IC = ic;
  g.H = h;
  g.W = w;
  g.OC = oc;
  g.KH = g.KW = k;
  g.SH = g.SW = s;
  return g;
}

namespace {

template <typename T>
void need_conv_x(const Tensor<T>& x, const ConvGeom& g, const char* op) {
  if (x.rank() != 4 || x.dim(0) != g.B || x.dim(1) != g.IC ||
      x.dim(2) != g.H || x.dim(3) != g.W) {
    throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) +
                     " does not match geometry");
  }
}

template <typename T>
void need_conv_w(const Tensor<T>& w, const ConvGeom& g, const char* op) {
  if (w.rank() != 4 || w.dim(0) != g.OC || w.dim(1) != g.IC ||
      w.dim(2) != g.KH || w.dim(3) != g.KW) {
    throw ShapeError(std::string(op) + ": weight " + shape_str(w.shape()) +
                     " does not match geometry");
  }
}

template <typename T>
void need_conv_y(const Tensor<T>& y, const ConvGeom& g, const char* op) {
  if (y.rank() != 4 || y.dim(0) != g.B || y.dim(1) != g.OC ||
      y.dim(2) != g.out_h() || y.dim(3) != g.out_w()) {
    throw ShapeError(std::string(op) + ": output " + shape_str(y.shape()) +
                     " does not match geometry");
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g) {
  need_conv_x(x, g, "conv2d");
  need_conv_w(w, g, "conv2d");
  std::vector<T> out(static_cast<int64_t>(g.B) * g.OC * g.out_h() * g.out_w());
  kernels::conv_fwd(g, x.data(), w.data(), out.data());
  return make_op<T>({g.B, g.OC, g.out_h(), g.out_w()}, std::move(out), {x, w},
                    "conv2d",
                    [x, w, g](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{
                          conv2d_input_grad(u, w, g),
                          conv2d_weight_grad(x, u, g)};
                    });
}

template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w,
                            const ConvGeom& g) {
  need_conv_y(gy, g, "conv2d_input_grad");
  need_conv_w(w, g, "conv2d_input_grad");
  std::vector<T> out(static_cast<int64_t>(g.B) * g.IC * g.H * g.W);
  kernels::conv_bwd_data(g, gy.data(), w.data(), out.data());
  return make_op<T>({g.B, g.IC, g.H, g.W}, std::move(out), {gy, w},
                    "conv2d_input_grad",
                    [gy, w, g](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{
                          conv2d(u, w, g), conv2d_weight_grad(u, gy, g)};
                    });
}

template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy,
                             const ConvGeom& g) {
  need_conv_x(x, g, "conv2d_weight_grad");
  need_conv_y(gy, g, "conv2d_weight_grad");
  std::vector<T> out(static_cast<int64_t>(g.OC) * g.IC * g.KH * g.KW);
  kernels::conv_bwd_weight(g, x.data(), gy.data(), out.data());
  return make_op<T>({g.OC, g.IC, g.KH, g.KW}, std::move(out), {x, gy},
                    "conv2d_weight_grad",
                    [x, gy, g](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{
                          conv2d_input_grad(gy, u, g), conv2d(x, u, g)};
                    });
}

template <typename T>
Tensor<T> channel_bcast(const Tensor<T>& b, int n, int h, int w) {
  need_rank(b, 1, "channel_bcast");
  const int c = b.dim(0);
  std::vector<T> out(static_cast<int64_t>(n) * c * h * w);
  const T* pb = b.data();
  par_for(static_cast<int64_t>(n) * c * h * w, [&](int64_t i) {
    out[i] = pb[(i / (static_cast<int64_t>(h) * w)) % c];
  });
  return make_op<T>({n, c, h, w}, std::move(out), {b}, "channel_bcast",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{channel_sum(u)};
                    });
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  need_rank(x, 4, "channel_sum");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(c, T(0));
  const T* px = x.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      const T* plane = px + (static_cast<int64_t>(i) * c + j) * h * w;
      T acc = 0;
      for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) acc += plane[p];
      out[j] += acc;
    }
  }
  return make_op<T>({c}, std::move(out), {x}, "channel_sum",
                    [n, h, w](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{channel_bcast(u, n, h, w)};
                    });
}

template <typename T>
Tensor<T> spatial_broadcast(const Tensor<T>& s, int h, int w) {
  need_rank(s, 2, "spatial_broadcast");
  const int n = s.dim(0), d = s.dim(1);
  std::vector<T> out(static_cast<int64_t>(n) * d * h * w);
  const T* ps = s.data();
  par_for(static_cast<int64_t>(n) * d * h * w, [&](int64_t i) {
    out[i] = ps[i / (static_cast<int64_t>(h) * w)];
  });
  return make_op<T>({n, d, h, w}, std::move(out), {s}, "spatial_broadcast",
                    [](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{spatial_sum(u)};
                    });
}

template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x) {
  need_rank(x, 4, "spatial_sum");
  const int n = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(static_cast<int64_t>(n) * d, T(0));
  const T* px = x.data();
  for (int64_t nd = 0; nd < static_cast<int64_t>(n) * d; ++nd) {
    const T* plane = px + nd * h * w;
    T acc = 0;
    for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) acc += plane[p];
    out[nd] = acc;
  }
  return make_op<T>({n, d}, std::move(out), {x}, "spatial_sum",
                    [h, w](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{
                          spatial_broadcast(u, h, w)};
                    });
}

// --- Pooling ---

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  need_rank(x, 4, "maxpool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2: H and W must be even");
  auto idx = std::make_shared<std::vector<int32_t>>(
      static_cast<int64_t>(n) * c * (h / 2) * (w / 2));
  std::vector<T> out(idx->size());
  kernels::maxpool2_fwd(n, c, h, w, x.data(), out.data(), idx->data());
  return make_op<T>({n, c, h / 2, w / 2}, std::move(out), {x}, "maxpool2",
                    [idx, h, w](const Tensor<T>& u, const Tensor<T>&) {
                      return std::vector<Tensor<T>>{maxunpool2(u, idx, h, w)};
                    },
                    idx);
}

// --- Composites ---

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), expand_to_rows(b, x.dim(0)));
}

template <typename T>
Tensor<T> conv2d_bias(const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& b, const ConvGeom& g) {
  return add(conv2d(x, w, g), channel_bcast(b, g.B, g.out_h(), g.out_w()));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  need_rank(x, 2, "layer_norm");
  const int r = x.dim(0), c = x.dim(1);
  Tensor<T> mu = scale(row_sum(x), T(1) / static_cast<T>(c));
  Tensor<T> xc = sub(x, expand_to_cols(mu, c));
  Tensor<T> var = scale(row_sum(square(xc)), T(1) / static_cast<T>(c));
  Tensor<T> inv = div(Tensor<T>::ones({r}), sqrt(add_const(var, eps)));
  Tensor<T> norm = mul(xc, expand_to_cols(inv, c));
  return add(mul(norm, expand_to_rows(gamma, r)), expand_to_rows(beta, r));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  return mean_all(square(sub(pred, target)));
}

// --- Non-differentiable helpers ---

template <typename T>
std::vector<int32_t> argmax_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("argmax_rows: rank 2 expected");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<int32_t> out(r);
  const T* pa = a.data();
  for (int i = 0; i < r; ++i) {
    const T* row = pa + static_cast<int64_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

template <typename T>
Tensor<T> max_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("max_rows: rank 2 expected");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r);
  const T* pa = a.data();
  for (int i = 0; i < r; ++i) {
    const T* row = pa + static_cast<int64_t>(i) * c;
    T best = row[0];
    for (int j = 1; j < c; ++j) best = std::max(best, row[j]);
    out[i] = best;
  }
  return Tensor<T>::from({r}, std::move(out));
}

#define OCGVF_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> neg<T>(const Tensor<T>&);                                 \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                            \
  template Tensor<T> add_const<T>(const Tensor<T>&, T);                        \
  template Tensor<T> relu<T>(const Tensor<T>&);                                \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                             \
  template Tensor<T> exp<T>(const Tensor<T>&);                                 \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                \
  template Tensor<T> square<T>(const Tensor<T>&);                              \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                             \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                            \
  template Tensor<T> row_sum<T>(const Tensor<T>&);                             \
  template Tensor<T> col_sum<T>(const Tensor<T>&);                             \
  template Tensor<T> expand_to_cols<T>(const Tensor<T>&, int);                 \
  template Tensor<T> expand_to_rows<T>(const Tensor<T>&, int);                 \
  template Tensor<T> sum_axis1<T>(const Tensor<T>&);                           \
  template Tensor<T> expand_axis1<T>(const Tensor<T>&, int);                   \
  template Tensor<T> batch_bcast<T>(const Tensor<T>&, int);                    \
  template Tensor<T> sum_batch<T>(const Tensor<T>&);                           \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                      \
  template Tensor<T> transpose<T>(const Tensor<T>&);                           \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);            \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, int, int);                \
  template Tensor<T> gather_rows<T>(const Tensor<T>&,                          \
                                    const std::vector<int32_t>&);              \
  template Tensor<T> scatter_rows<T>(const Tensor<T>&,                         \
                                     const std::vector<int32_t>&, int);        \
  template Tensor<T> select_actions<T>(const Tensor<T>&,                       \
                                       const std::vector<int32_t>&);           \
  template Tensor<T> scatter_actions<T>(const Tensor<T>&,                      \
                                        const std::vector<int32_t>&, int);     \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                        \
  template Tensor<T> softmax_axis1<T>(const Tensor<T>&);                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> bmm_nt<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> bmm_tn<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> nchw_to_nlc<T>(const Tensor<T>&);                         \
  template Tensor<T> nlc_to_nchw<T>(const Tensor<T>&, int, int);               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const ConvGeom&);                               \
  template Tensor<T> conv2d_input_grad<T>(const Tensor<T>&, const Tensor<T>&,  \
                                          const ConvGeom&);                    \
  template Tensor<T> conv2d_weight_grad<T>(const Tensor<T>&, const Tensor<T>&, \
                                           const ConvGeom&);                   \
  template Tensor<T> channel_bcast<T>(const Tensor<T>&, int, int, int);        \
  template Tensor<T> channel_sum<T>(const Tensor<T>&);                         \
  template Tensor<T> spatial_broadcast<T>(const Tensor<T>&, int, int);         \
  template Tensor<T> spatial_sum<T>(const Tensor<T>&);                         \
  template Tensor<T> maxpool2<T>(const Tensor<T>&);                            \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&);                              \
  template Tensor<T> conv2d_bias<T>(const Tensor<T>&, const Tensor<T>&,        \
                                    const Tensor<T>&, const ConvGeom&);        \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&,         \
                                   const Tensor<T>&, T);                       \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);               \
  template std::vector<int32_t> argmax_rows<T>(const Tensor<T>&);              \
  template Tensor<T> max_rows<T>(const Tensor<T>&);

OCGVF_INSTANTIATE_OPS(float)
OCGVF_INSTANTIATE_OPS(double)

#undef OCGVF_INSTANTIATE_OPS

}  // namespace ocgvf::core
