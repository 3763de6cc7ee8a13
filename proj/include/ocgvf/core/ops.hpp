#pragma once

#include <vector>

#include "ocgvf/core/kernels.hpp"
#include "ocgvf/core/tensor.hpp"

// Differentiable primitives. Every vjp is itself written with these ops, so
// gradients taken with create_graph can be differentiated again (needed for
// the meta-gradient, which backpropagates through inner-loop updates).

namespace ocgvf::core {

using kernels::ConvGeom;

// --- Elementwise ---
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_const(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);

// --- Reductions and broadcasts ---
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);          // [1]
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);         // [1]
template <typename T> Tensor<T> row_sum(const Tensor<T>& a);          // [R,C]->[R]
template <typename T> Tensor<T> col_sum(const Tensor<T>& a);          // [R,C]->[C]
template <typename T> Tensor<T> expand_to_cols(const Tensor<T>& v, int cols);  // [R]->[R,cols]
template <typename T> Tensor<T> expand_to_rows(const Tensor<T>& v, int rows);  // [C]->[rows,C]
template <typename T> Tensor<T> sum_axis1(const Tensor<T>& a);        // [B,K,M]->[B,M]
template <typename T> Tensor<T> expand_axis1(const Tensor<T>& a, int k);  // [B,M]->[B,k,M]
template <typename T> Tensor<T> batch_bcast(const Tensor<T>& a, int n);  // S->[n]+S
template <typename T> Tensor<T> sum_batch(const Tensor<T>& a);        // [n]+S->S

// --- Shaping ---
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape s);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);        // [R,C]->[C,R]
template <typename T> Tensor<T> nchw_to_nlc(const Tensor<T>& a);      // [N,C,H,W]->[N,HW,C]
template <typename T>
Tensor<T> nlc_to_nchw(const Tensor<T>& a, int h, int w);              // [N,HW,C]->[N,C,H,W]
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, int start, int len);

// --- Indexing ---
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int32_t>& idx);
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, const std::vector<int32_t>& idx,
                       int rows);
template <typename T>
Tensor<T> select_actions(const Tensor<T>& q, const std::vector<int32_t>& a);
template <typename T>
Tensor<T> scatter_actions(const Tensor<T>& v, const std::vector<int32_t>& a,
                          int num_actions);

// --- Softmax (canonical summation) ---
// The normalizer is accumulated over values sorted in descending order, so a
// permutation of the softmax axis permutes outputs bitwise exactly.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);     // over cols
template <typename T> Tensor<T> softmax_axis1(const Tensor<T>& a);    // [B,K,M] over K

// --- Linear algebra ---
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Batched matmul over leading dim: closed under differentiation as a trio.
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);     // [B,M,K]x[B,K,N]
template <typename T> Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b);  // [B,M,K]x[B,N,K]
template <typename T> Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b);  // [B,M,K]x[B,M,N]

// --- Convolution family (closed under differentiation) ---
ConvGeom same_conv_geom(int b, int ic, int h, int w, int oc, int k, int s);
ConvGeom valid_conv_geom(int b, int ic, int h, int w, int oc, int k, int s);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g);
template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w,
                            const ConvGeom& g);  // transposed conv
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy,
                             const ConvGeom& g);
template <typename T>
Tensor<T> channel_bcast(const Tensor<T>& b, int n, int h, int w);
template <typename T> Tensor<T> channel_sum(const Tensor<T>& x);      // [N,C,H,W]->[C]
template <typename T>
Tensor<T> spatial_broadcast(const Tensor<T>& s, int h, int w);        // [N,D]->[N,D,h,w]
template <typename T> Tensor<T> spatial_sum(const Tensor<T>& x);      // [N,D,h,w]->[N,D]

// --- Pooling (2x2, stride 2) ---
template <typename T> Tensor<T> maxpool2(const Tensor<T>& x);         // [N,C,H,W]

// --- Composites ---
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
Tensor<T> conv2d_bias(const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& b, const ConvGeom& g);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));
template <typename T> Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);

// --- Non-differentiable helpers ---
template <typename T>
std::vector<int32_t> argmax_rows(const Tensor<T>& a);  // first max wins ties
template <typename T> Tensor<T> max_rows(const Tensor<T>& a);  // constant [R]

}  // namespace ocgvf::core
