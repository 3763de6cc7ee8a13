#include <doctest.h>

#include <vector>

#include "ocgvf/core/kernels.hpp"
#include "ocgvf/core/ops.hpp"
#include "ocgvf/core/rng.hpp"
#include "test_helpers.hpp"

namespace k = ocgvf::core::kernels;
using ocgvf::core::Rng;
using ocgvf::core::Tensor;
using ocgvf::test::max_rel_diff;

namespace {

struct BackendGuard {
  k::Backend prev;
  explicit BackendGuard(k::Backend b) : prev(k::backend()) { k::set_backend(b); }
  ~BackendGuard() { k::set_backend(prev); }
};

k::ConvGeom geom(int b, int ic, int h, int w, int oc, int kk, int s, int pb,
                 int pe) {
  k::ConvGeom g;
  g.B = b;
  g.IC = ic;
  g.H = h;
  g.W = w;
  g.OC = oc;
  g.KH = g.KW = kk;
  g.SH = g.SW = s;
  g.PHB = g.PWB = pb;
  g.PHE = g.PWE = pe;
  return g;
}

}  // namespace

TEST_CASE("reference conv matches a hand-computed case") {
  BackendGuard bg(k::Backend::reference);
  auto g = geom(1, 1, 3, 3, 1, 2, 1, 0, 0);
  std::vector<float> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<float> w = {1, 0, 0, 1};
  std::vector<float> y(4);
  k::conv_fwd(g, x.data(), w.data(), y.data());
  CHECK(y[0] == 6);
  CHECK(y[1] == 8);
  CHECK(y[2] == 12);
  CHECK(y[3] == 14);
}

TEST_CASE("same-padding geometry reproduces expected output sizes") {
  auto g1 = ocgvf::core::same_conv_geom(1, 3, 32, 32, 16, 3, 1);
  CHECK(g1.out_h() == 32);
  CHECK(g1.PHB == 1);
  CHECK(g1.PHE == 1);
  auto g2 = ocgvf::core::same_conv_geom(1, 16, 32, 32, 32, 3, 2);
  CHECK(g2.out_h() == 16);
  CHECK(g2.PHB == 0);
  CHECK(g2.PHE == 1);
  auto g3 = ocgvf::core::same_conv_geom(1, 3, 64, 64, 32, 5, 1);
  CHECK(g3.out_h() == 64);
  CHECK(g3.PHB == 2);
  CHECK(g3.PHE == 2);
}

TEST_CASE_TEMPLATE("fast and reference kernels agree", T, float, double) {
  Rng rng(17);
  const double tol = sizeof(T) == 4 ? 1e-4 : 1e-12;

  const std::vector<k::ConvGeom> geoms = {
      geom(2, 3, 8, 8, 4, 3, 1, 1, 1),  geom(2, 4, 9, 9, 3, 3, 2, 0, 1),
      geom(1, 2, 6, 7, 5, 5, 1, 2, 2),  geom(3, 1, 5, 5, 2, 2, 1, 0, 0),
      geom(2, 8, 16, 16, 8, 3, 2, 0, 1)};

  for (const auto& g : geoms) {
    CAPTURE(g.H);
    CAPTURE(g.SH);
    const int64_t xn = static_cast<int64_t>(g.B) * g.IC * g.H * g.W;
    const int64_t wn = static_cast<int64_t>(g.OC) * g.IC * g.KH * g.KW;
    const int64_t yn =
        static_cast<int64_t>(g.B) * g.OC * g.out_h() * g.out_w();
    std::vector<T> x(xn), w(wn), gy(yn);
    for (auto& v : x) v = static_cast<T>(rng.normal());
    for (auto& v : w) v = static_cast<T>(rng.normal());
    for (auto& v : gy) v = static_cast<T>(rng.normal());

    std::vector<T> y_ref(yn), y_fast(yn), gx_ref(xn), gx_fast(xn), gw_ref(wn),
        gw_fast(wn);
    {
      BackendGuard bg(k::Backend::reference);
      k::conv_fwd(g, x.data(), w.data(), y_ref.data());
      k::conv_bwd_data(g, gy.data(), w.data(), gx_ref.data());
      k::conv_bwd_weight(g, x.data(), gy.data(), gw_ref.data());
    }
    {
      BackendGuard bg(k::Backend::fast);
      k::conv_fwd(g, x.data(), w.data(), y_fast.data());
      k::conv_bwd_data(g, gy.data(), w.data(), gx_fast.data());
      k::conv_bwd_weight(g, x.data(), gy.data(), gw_fast.data());
    }
    // Max abs difference normalized by the magnitude of the reference
    // output; plain elementwise relative error blows up near zeros.
    auto cmp = [&](const std::vector<T>& a, const std::vector<T>& b) {
      double worst = 0, mag = 1;
      for (size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                         static_cast<double>(b[i])));
        mag = std::max(mag, std::abs(static_cast<double>(a[i])));
      }
      return worst / mag;
    };
    CHECK(cmp(y_ref, y_fast) < tol);
    CHECK(cmp(gx_ref, gx_fast) < tol);
    CHECK(cmp(gw_ref, gw_fast) < tol);
  }
}

TEST_CASE_TEMPLATE("gemm backends agree", T, float, double) {
  Rng rng(5);
  const double tol = sizeof(T) == 4 ? 2e-4 : 1e-10;
  const int m = 17, n = 23, kk = 31;
  std::vector<T> a(m * kk), b(kk * n), c_ref(m * n, T(1)), c_fast(m * n, T(1));
  for (auto& v : a) v = static_cast<T>(rng.normal());
  for (auto& v : b) v = static_cast<T>(rng.normal());
  {
    BackendGuard bg(k::Backend::reference);
    k::gemm<T>(false, true, m, n, kk, T(2), a.data(), kk, b.data(), kk, T(0.5),
               c_ref.data(), n);
  }
  {
    BackendGuard bg(k::Backend::fast);
    k::gemm<T>(false, true, m, n, kk, T(2), a.data(), kk, b.data(), kk, T(0.5),
               c_fast.data(), n);
  }
  double worst = 0;
  for (size_t i = 0; i < c_ref.size(); ++i) {
    worst = std::max(worst, ocgvf::test::rel_err(c_ref[i], c_fast[i]));
  }
  CHECK(worst < tol);
}

TEST_CASE("maxpool records first maximum and adjoints invert") {
  // 1x1x4x4 plane, constructed so one window has a tie.
  std::vector<float> x = {1, 2, 5, 5, 3, 4, 5, 5, 0, 0, 9, 8, 0, 0, 7, 6};
  std::vector<float> y(4);
  std::vector<int32_t> idx(4);
  k::maxpool2_fwd(1, 1, 4, 4, x.data(), y.data(), idx.data());
  CHECK(y[0] == 4);
  CHECK(y[1] == 5);
  CHECK(idx[1] == 2);  // ties resolve to the earliest offset
  CHECK(y[2] == 0);
  CHECK(y[3] == 9);

  std::vector<float> up = {10, 20, 30, 40};
  std::vector<float> gx(16);
  k::maxpool2_scatter(1, 1, 4, 4, up.data(), idx.data(), gx.data());
  std::vector<float> back(4);
  k::maxpool2_gather(1, 1, 4, 4, gx.data(), idx.data(), back.data());
  CHECK(back == up);
}
