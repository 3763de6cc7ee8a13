#include "ocgvf/core/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

extern "C" void openblas_set_num_threads(int);

namespace ocgvf::core::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::fast};

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// cols[(ic*KH+kh)*KW+kw, oh*OW+ow] for one image
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const int oh_n = g.out_h(), ow_n = g.out_w();
  for (int ic = 0; ic < g.IC; ++ic) {
    const T* plane = x + static_cast<int64_t>(ic) * g.H * g.W;
    for (int kh = 0; kh < g.KH; ++kh) {
      for (int kw = 0; kw < g.KW; ++kw) {
        T* row = cols + (static_cast<int64_t>((ic * g.KH + kh) * g.KW + kw)) *
                            oh_n * ow_n;
        for (int oh = 0; oh < oh_n; ++oh) {
          const int h = oh * g.SH - g.PHB + kh;
          if (h < 0 || h >= g.H) {
            std::fill(row + oh * ow_n, row + (oh + 1) * ow_n, T(0));
            continue;
          }
          for (int ow = 0; ow < ow_n; ++ow) {
            const int w = ow * g.SW - g.PWB + kw;
            row[oh * ow_n + ow] =
                (w < 0 || w >= g.W) ? T(0) : plane[h * g.W + w];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* cols, T* x) {
  const int oh_n = g.out_h(), ow_n = g.out_w();
  for (int ic = 0; ic < g.IC; ++ic) {
    T* plane = x + static_cast<int64_t>(ic) * g.H * g.W;
    for (int kh = 0; kh < g.KH; ++kh) {
      for (int kw = 0; kw < g.KW; ++kw) {
        const T* row = cols + (static_cast<int64_t>((ic * g.KH + kh) * g.KW +
                                                    kw)) *
                                  oh_n * ow_n;
        for (int oh = 0; oh < oh_n; ++oh) {
          const int h = oh * g.SH - g.PHB + kh;
          if (h < 0 || h >= g.H) continue;
          for (int ow = 0; ow < ow_n; ++ow) {
            const int w = ow * g.SW - g.PWB + kw;
            if (w < 0 || w >= g.W) continue;
            plane[h * g.W + w] += row[oh * ow_n + ow];
          }
        }
      }
    }
  }
}

template <typename T>
void gemm_ref(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
              const T* a, int lda, const T* b, int ldb, T beta, T* c,
              int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
    }
  }
}

}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

void init_from_env() {
  openblas_set_num_threads(1);
  if (const char* v = std::getenv("OCGVF_KERNEL_BACKEND")) {
    std::string s(v);
    if (s == "reference") set_backend(Backend::reference);
    if (s == "fast") set_backend(Backend::fast);
  }
}

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  if (backend() == Backend::reference) {
    gemm_ref(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                  const double* a, int lda, const double* b, int ldb,
                  double beta, double* c, int ldc) {
  if (backend() == Backend::reference) {
    gemm_ref(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <typename T>
void conv_fwd(const ConvGeom& g, const T* x, const T* w, T* y) {
  const int oh_n = g.out_h(), ow_n = g.out_w();
  const int64_t x_img = static_cast<int64_t>(g.IC) * g.H * g.W;
  const int64_t y_img = static_cast<int64_t>(g.OC) * oh_n * ow_n;
  if (backend() == Backend::reference) {
    for (int b = 0; b < g.B; ++b) {
      for (int oc = 0; oc < g.OC; ++oc) {
        for (int oh = 0; oh < oh_n; ++oh) {
          for (int ow = 0; ow < ow_n; ++ow) {
            T acc = 0;
            for (int ic = 0; ic < g.IC; ++ic) {
              for (int kh = 0; kh < g.KH; ++kh) {
                const int h = oh * g.SH - g.PHB + kh;
                if (h < 0 || h >= g.H) continue;
                for (int kw = 0; kw < g.KW; ++kw) {
                  const int wdx = ow * g.SW - g.PWB + kw;
                  if (wdx < 0 || wdx >= g.W) continue;
                  acc += x[b * x_img + (static_cast<int64_t>(ic) * g.H + h) *
                                           g.W +
                           wdx] *
                         w[((static_cast<int64_t>(oc) * g.IC + ic) * g.KH +
                            kh) *
                              g.KW +
                           kw];
                }
              }
            }
            y[b * y_img + (static_cast<int64_t>(oc) * oh_n + oh) * ow_n + ow] =
                acc;
          }
        }
      }
    }
    return;
  }
  const int64_t kdim = static_cast<int64_t>(g.IC) * g.KH * g.KW;
  const int64_t cols_n = kdim * oh_n * ow_n;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.B; ++b) {
    auto& buf = scratch<T>();
    if (static_cast<int64_t>(buf.size()) < cols_n) buf.resize(cols_n);
    im2col(g, x + b * x_img, buf.data());
    gemm<T>(false, false, g.OC, oh_n * ow_n, static_cast<int>(kdim), T(1), w,
            static_cast<int>(kdim), buf.data(), oh_n * ow_n, T(0),
            y + b * y_img, oh_n * ow_n);
  }
}

template <typename T>
void conv_bwd_data(const ConvGeom& g, const T* gy, const T* w, T* gx) {
  const int oh_n = g.out_h(), ow_n = g.out_w();
  const int64_t x_img = static_cast<int64_t>(g.IC) * g.H * g.W;
  const int64_t y_img = static_cast<int64_t>(g.OC) * oh_n * ow_n;
  std::fill(gx, gx + static_cast<int64_t>(g.B) * x_img, T(0));
  if (backend() == Backend::reference) {
    for (int b = 0; b < g.B; ++b) {
      for (int oc = 0; oc < g.OC; ++oc) {
        for (int oh = 0; oh < oh_n; ++oh) {
          for (int ow = 0; ow < ow_n; ++ow) {
            const T gv =
                gy[b * y_img + (static_cast<int64_t>(oc) * oh_n + oh) * ow_n +
                   ow];
            for (int ic = 0; ic < g.IC; ++ic) {
              for (int kh = 0; kh < g.KH; ++kh) {
                const int h = oh * g.SH - g.PHB + kh;
                if (h < 0 || h >= g.H) continue;
                for (int kw = 0; kw < g.KW; ++kw) {
                  const int wdx = ow * g.SW - g.PWB + kw;
                  if (wdx < 0 || wdx >= g.W) continue;
                  gx[b * x_img +
                     (static_cast<int64_t>(ic) * g.H + h) * g.W + wdx] +=
                      gv * w[((static_cast<int64_t>(oc) * g.IC + ic) * g.KH +
                              kh) *
                                 g.KW +
                             kw];
                }
              }
            }
          }
        }
      }
    }
    return;
  }
  const int64_t kdim = static_cast<int64_t>(g.IC) * g.KH * g.KW;
  const int64_t cols_n = kdim * oh_n * ow_n;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < g.B; ++b) {
    auto& buf = scratch<T>();
    if (static_cast<int64_t>(buf.size()) < cols_n) buf.resize(cols_n);
    gemm<T>(true, false, static_cast<int>(kdim), oh_n * ow_n, g.OC, T(1), w,
            static_cast<int>(kdim), gy + b * y_img, oh_n * ow_n, T(0),
            buf.data(), oh_n * ow_n);
    col2im_add(g, buf.data(), gx + b * x_img);
  }
}

template <typename T>
void conv_bwd_weight(const ConvGeom& g, const T* x, const T* gy, T* gw) {
  const int oh_n = g.out_h(), ow_n = g.out_w();
  const int64_t x_img = static_cast<int64_t>(g.IC) * g.H * g.W;
  const int64_t y_img = static_cast<int64_t>(g.OC) * oh_n * ow_n;
  const int64_t kdim = static_cast<int64_t>(g.IC) * g.KH * g.KW;
  if (backend() == Backend::reference) {
    std::fill(gw, gw + g.OC * kdim, T(0));
    for (int b = 0; b < g.B; ++b) {
      for (int oc = 0; oc < g.OC; ++oc) {
        for (int oh = 0; oh < oh_n; ++oh) {
          for (int ow = 0; ow < ow_n; ++ow) {
            const T gv =
                gy[b * y_img + (static_cast<int64_t>(oc) * oh_n + oh) * ow_n +
                   ow];
            for (int ic = 0; ic < g.IC; ++ic) {
              for (int kh = 0; kh < g.KH; ++kh) {
                const int h = oh * g.SH - g.PHB + kh;
                if (h < 0 || h >= g.H) continue;
                for (int kw = 0; kw < g.KW; ++kw) {
                  const int wdx = ow * g.SW - g.PWB + kw;
                  if (wdx < 0 || wdx >= g.W) continue;
                  gw[((static_cast<int64_t>(oc) * g.IC + ic) * g.KH + kh) *
                         g.KW +
                     kw] +=
                      gv *
                      x[b * x_img + (static_cast<int64_t>(ic) * g.H + h) * g.W +
                        wdx];
                }
              }
            }
          }
        }
      }
    }
    return;
  }
  // Accumulation over the batch stays sequential so results do not depend on
  // thread count.
  const int64_t cols_n = kdim * oh_n * ow_n;
  auto& buf = scratch<T>();
  if (static_cast<int64_t>(buf.size()) < cols_n) buf.resize(cols_n);
  for (int b = 0; b < g.B; ++b) {
    im2col(g, x + b * x_img, buf.data());
    gemm<T>(false, true, g.OC, static_cast<int>(kdim), oh_n * ow_n, T(1),
            gy + b * y_img, oh_n * ow_n, buf.data(), oh_n * ow_n,
            b == 0 ? T(0) : T(1), gw, static_cast<int>(kdim));
  }
}

template <typename T>
void maxpool2_fwd(int b, int c, int h, int w, const T* x, T* y, int32_t* idx) {
  const int oh_n = h / 2, ow_n = w / 2;
  const int64_t planes = static_cast<int64_t>(b) * c;
#pragma omp parallel for schedule(static) if (planes > 8)
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = x + p * h * w;
    T* out = y + p * oh_n * ow_n;
    int32_t* oidx = idx + p * oh_n * ow_n;
    for (int oh = 0; oh < oh_n; ++oh) {
      for (int ow = 0; ow < ow_n; ++ow) {
        int32_t best = (2 * oh) * w + 2 * ow;
        T bv = in[best];
        const int32_t cand[3] = {(2 * oh) * w + 2 * ow + 1,
                                 (2 * oh + 1) * w + 2 * ow,
                                 (2 * oh + 1) * w + 2 * ow + 1};
        for (int32_t ci : cand) {
          if (in[ci] > bv) {
            bv = in[ci];
            best = ci;
          }
        }
        out[oh * ow_n + ow] = bv;
        oidx[oh * ow_n + ow] = best;
      }
    }
  }
}

template <typename T>
void maxpool2_scatter(int b, int c, int h, int w, const T* gy,
                      const int32_t* idx, T* gx) {
  const int oh_n = h / 2, ow_n = w / 2;
  const int64_t planes = static_cast<int64_t>(b) * c;
  std::fill(gx, gx + planes * h * w, T(0));
#pragma omp parallel for schedule(static) if (planes > 8)
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = gy + p * oh_n * ow_n;
    const int32_t* pidx = idx + p * oh_n * ow_n;
    T* out = gx + p * h * w;
    for (int i = 0; i < oh_n * ow_n; ++i) out[pidx[i]] += in[i];
  }
}

template <typename T>
void maxpool2_gather(int b, int c, int h, int w, const T* x,
                     const int32_t* idx, T* y) {
  const int oh_n = h / 2, ow_n = w / 2;
  const int64_t planes = static_cast<int64_t>(b) * c;
#pragma omp parallel for schedule(static) if (planes > 8)
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = x + p * h * w;
    const int32_t* pidx = idx + p * oh_n * ow_n;
    T* out = y + p * oh_n * ow_n;
    for (int i = 0; i < oh_n * ow_n; ++i) out[i] = in[pidx[i]];
  }
}

template void conv_fwd<float>(const ConvGeom&, const float*, const float*,
                              float*);
template void conv_fwd<double>(const ConvGeom&, const double*, const double*,
                               double*);
template void conv_bwd_data<float>(const ConvGeom&, const float*, const float*,
                                   float*);
template void conv_bwd_data<double>(const ConvGeom&, const double*,
                                    const double*, double*);
template void conv_bwd_weight<float>(const ConvGeom&, const float*,
                                     const float*, float*);
template void conv_bwd_weight<double>(const ConvGeom&, const double*,
                                      const double*, double*);
template void maxpool2_fwd<float>(int, int, int, int, const float*, float*,
                                  int32_t*);
template void maxpool2_fwd<double>(int, int, int, int, const double*, double*,
                                   int32_t*);
template void maxpool2_scatter<float>(int, int, int, int, const float*,
                                      const int32_t*, float*);
template void maxpool2_scatter<double>(int, int, int, int, const double*,
                                       const int32_t*, double*);
template void maxpool2_gather<float>(int, int, int, int, const float*,
                                     const int32_t*, float*);
template void maxpool2_gather<double>(int, int, int, int, const double*,
                                      const int32_t*, double*);

}  // namespace ocgvf::core::kernels
