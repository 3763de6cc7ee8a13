#pragma once

#include <cstdint>

namespace ocgvf::core::kernels {

// Two interchangeable kernel paths: `reference` is a plain serial
// implementation kept as ground truth for tests; `fast` uses im2col+GEMM and
// OpenMP. Both produce the same results within floating-point tolerance.
enum class Backend { reference, fast };

Backend backend();
void set_backend(Backend b);

// Reads OCGVF_KERNEL_BACKEND ("reference"/"fast") once; also pins the BLAS
// thread pool to one thread so OpenMP placement stays in our hands.
void init_from_env();

// Geometry is always stated for the forward direction x[H,W] -> y[OH,OW];
// the adjoint kernels reuse it unchanged. Padding may be asymmetric
// (begin/end), which stride-2 same-size transposed convolutions require.
struct ConvGeom {
  int B = 1, IC = 1, H = 1, W = 1;
  int OC = 1, KH = 1, KW = 1;
  int SH = 1, SW = 1;
  int PHB = 0, PHE = 0, PWB = 0, PWE = 0;

  int out_h() const { return (H + PHB + PHE - KH) / SH + 1; }
  int out_w() const { return (W + PWB + PWE - KW) / SW + 1; }

  bool operator==(const ConvGeom&) const = default;
};

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc);

// y[B,OC,OH,OW] = x[B,IC,H,W] * w[OC,IC,KH,KW]
template <typename T>
void conv_fwd(const ConvGeom& g, const T* x, const T* w, T* y);

// gx[B,IC,H,W] = gy[B,OC,OH,OW] *^T w   (adjoint of conv_fwd in x)
template <typename T>
void conv_bwd_data(const ConvGeom& g, const T* gy, const T* w, T* gx);

// gw[OC,IC,KH,KW] = sum_b x_b (x) gy_b  (adjoint of conv_fwd in w)
template <typename T>
void conv_bwd_weight(const ConvGeom& g, const T* x, const T* gy, T* gw);

// 2x2 stride-2 max pooling; idx stores the flat offset within each (b,c)
// plane of the chosen element (first maximum wins ties).
template <typename T>
void maxpool2_fwd(int b, int c, int h, int w, const T* x, T* y, int32_t* idx);

template <typename T>
void maxpool2_scatter(int b, int c, int h, int w, const T* gy,
                      const int32_t* idx, T* gx);

template <typename T>
void maxpool2_gather(int b, int c, int h, int w, const T* x,
                     const int32_t* idx, T* y);

}  // namespace ocgvf::core::kernels
