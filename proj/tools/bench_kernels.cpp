// Times the serial reference kernels against the im2col+GEMM/OpenMP path on
// the convolution and GEMM shapes this project actually runs.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "ocgvf/core/kernels.hpp"
#include "ocgvf/core/ops.hpp"
#include "ocgvf/core/rng.hpp"

namespace k = ocgvf::core::kernels;
using ocgvf::core::Rng;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Case {
  std::string name;
  k::ConvGeom g;
};

double time_conv(const k::ConvGeom& g, k::Backend b, int iters,
                 double* flops_out) {
  Rng rng(1);
  std::vector<float> x(static_cast<size_t>(g.B) * g.IC * g.H * g.W);
  std::vector<float> w(static_cast<size_t>(g.OC) * g.IC * g.KH * g.KW);
  std::vector<float> y(static_cast<size_t>(g.B) * g.OC * g.out_h() *
                       g.out_w());
  for (auto& v : x) v = static_cast<float>(rng.normal());
  for (auto& v : w) v = static_cast<float>(rng.normal());

  k::set_backend(b);
  k::conv_fwd(g, x.data(), w.data(), y.data());  // warm up
  const double t0 = now_s();
  for (int i = 0; i < iters; ++i) {
    k::conv_fwd(g, x.data(), w.data(), y.data());
  }
  const double dt = (now_s() - t0) / iters;
  *flops_out = 2.0 * g.B * g.OC * g.out_h() * g.out_w() * g.IC * g.KH * g.KW;
  return dt;
}

}  // namespace

int main() {
  k::init_from_env();

  const std::vector<Case> cases = {
      {"enc 32x32x3 -> 16 (k3)", ocgvf::core::same_conv_geom(32, 3, 32, 32, 16, 3, 1)},
      {"enc 16x16x16 -> 32 (k3)", ocgvf::core::same_conv_geom(32, 16, 16, 16, 32, 3, 1)},
      {"enc 8x8x32 -> 64 (k3)", ocgvf::core::same_conv_geom(32, 32, 8, 8, 64, 3, 1)},
      {"slot enc 32x32x32 -> 32", ocgvf::core::same_conv_geom(16, 32, 32, 32, 32, 3, 1)},
      {"slot dec 16->32 up", ocgvf::core::same_conv_geom(80, 32, 32, 32, 64, 3, 2)},
  };

  std::printf("%-28s %12s %12s %8s\n", "case", "reference", "fast", "speedup");
  for (const auto& c : cases) {
    double flops = 0;
    const double tr = time_conv(c.g, k::Backend::reference, 2, &flops);
    const double tf = time_conv(c.g, k::Backend::fast, 10, &flops);
    std::printf("%-28s %9.2f ms %9.2f ms %7.1fx   (%5.1f GFLOP/s fast)\n",
                c.name.c_str(), tr * 1e3, tf * 1e3, tr / tf,
                flops / tf * 1e-9);
  }

  // GEMM at the fused-head size
  {
    const int m = 32, n = 64, kk = 4096;
    Rng rng(2);
    std::vector<float> a(static_cast<size_t>(m) * kk), b(static_cast<size_t>(kk) * n),
        cbuf(static_cast<size_t>(m) * n);
    for (auto& v : a) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());
    auto run = [&](k::Backend bk, int iters) {
      k::set_backend(bk);
      const double t0 = now_s();
      for (int i = 0; i < iters; ++i) {
        k::gemm<float>(false, false, m, n, kk, 1.f, a.data(), kk, b.data(), n,
                       0.f, cbuf.data(), n);
      }
      return (now_s() - t0) / iters;
    };
    const double tr = run(k::Backend::reference, 3);
    const double tf = run(k::Backend::fast, 20);
    std::printf("%-28s %9.2f ms %9.2f ms %7.1fx\n", "gemm 32x4096x64", tr * 1e3,
                tf * 1e3, tr / tf);
  }
  return 0;
}
