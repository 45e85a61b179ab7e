#include "scda/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cstdint>

namespace scda::kernels {

namespace parallel {

// Row-streaming loop orders: each output element still receives its terms in
// increasing reduction-index order, starting from an exact 0.0.

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  const auto m = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * d.n;
    std::fill(crow, crow + d.n, 0.0);
    for (std::size_t p = 0; p < d.k; ++p) {
      const double aip = a[i * d.k + p];
      const double* brow = b.data() + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  const auto m = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * d.k;
    for (std::size_t j = 0; j < d.n; ++j) {
      const double* brow = b.data() + j * d.k;
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += arow[p] * brow[p];
      c[i * d.n + j] = acc;
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  const auto m = static_cast<std::int64_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * d.n;
    std::fill(crow, crow + d.n, 0.0);
    for (std::size_t p = 0; p < d.k; ++p) {
      const double api = a[p * d.m + i];
      const double* brow = b.data() + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) crow[j] += api * brow[j];
    }
  }
}

void conv1x1(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d) {
  const std::size_t P = d.positions;
  const auto rows = static_cast<std::int64_t>(d.batch * d.out_ch);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t n = r / d.out_ch;
    const std::size_t o = r % d.out_ch;
    double* yrow = y.data() + r * P;
    std::fill(yrow, yrow + P, 0.0);
    for (std::size_t i = 0; i < d.in_ch; ++i) {
      const double wi = w[o * d.in_ch + i];
      const double* xrow = x.data() + (n * d.in_ch + i) * P;
      for (std::size_t p = 0; p < P; ++p) yrow[p] += wi * xrow[p];
    }
    if (!bias.empty()) {
      for (std::size_t p = 0; p < P; ++p) yrow[p] += bias[o];
    }
  }
}

void conv1x1_grad_input(std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx, ConvDims d) {
  const std::size_t P = d.positions;
  const auto rows = static_cast<std::int64_t>(d.batch * d.in_ch);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t n = r / d.in_ch;
    const std::size_t i = r % d.in_ch;
    double* gxrow = gx.data() + r * P;
    std::fill(gxrow, gxrow + P, 0.0);
    for (std::size_t o = 0; o < d.out_ch; ++o) {
      const double woi = w[o * d.in_ch + i];
      const double* gyrow = gy.data() + (n * d.out_ch + o) * P;
      for (std::size_t p = 0; p < P; ++p) gxrow[p] += woi * gyrow[p];
    }
  }
}

void conv1x1_grad_params(std::span<const double> gy, std::span<const double> x,
                         std::span<double> gw, std::span<double> gb, ConvDims d) {
  const std::size_t P = d.positions;
  const auto cells = static_cast<std::int64_t>(d.out_ch * d.in_ch);
#pragma omp parallel for schedule(static)
  for (std::int64_t cell = 0; cell < cells; ++cell) {
    const std::size_t o = cell / d.in_ch;
    const std::size_t i = cell % d.in_ch;
    double acc = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const double* gyrow = gy.data() + (n * d.out_ch + o) * P;
      const double* xrow = x.data() + (n * d.in_ch + i) * P;
      for (std::size_t p = 0; p < P; ++p) acc += gyrow[p] * xrow[p];
    }
    gw[cell] = acc;
  }
  if (!gb.empty()) {
    const auto outs = static_cast<std::int64_t>(d.out_ch);
#pragma omp parallel for schedule(static)
    for (std::int64_t o = 0; o < outs; ++o) {
      double acc = 0.0;
      for (std::size_t n = 0; n < d.batch; ++n) {
        const double* gyrow = gy.data() + (n * d.out_ch + o) * P;
        for (std::size_t p = 0; p < P; ++p) acc += gyrow[p];
      }
      gb[o] = acc;
    }
  }
}

}  // namespace parallel

namespace {
bool go_parallel(std::size_t work) { return work >= kParallelThreshold && max_threads() > 1; }
}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  go_parallel(d.m * d.k * d.n) ? parallel::matmul(a, b, c, d) : serial::matmul(a, b, c, d);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  go_parallel(d.m * d.k * d.n) ? parallel::matmul_nt(a, b, c, d) : serial::matmul_nt(a, b, c, d);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  go_parallel(d.m * d.k * d.n) ? parallel::matmul_tn(a, b, c, d) : serial::matmul_tn(a, b, c, d);
}

void conv1x1(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d) {
  go_parallel(d.batch * d.in_ch * d.out_ch * d.positions) ? parallel::conv1x1(x, w, bias, y, d)
                                                          : serial::conv1x1(x, w, bias, y, d);
}

void conv1x1_grad_input(std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx, ConvDims d) {
  go_parallel(d.batch * d.in_ch * d.out_ch * d.positions)
      ? parallel::conv1x1_grad_input(gy, w, gx, d)
      : serial::conv1x1_grad_input(gy, w, gx, d);
}

void conv1x1_grad_params(std::span<const double> gy, std::span<const double> x,
                         std::span<double> gw, std::span<double> gb, ConvDims d) {
  go_parallel(d.batch * d.in_ch * d.out_ch * d.positions)
      ? parallel::conv1x1_grad_params(gy, x, gw, gb, d)
      : serial::conv1x1_grad_params(gy, x, gw, gb, d);
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace scda::kernels
