#include "scda/kernels.hpp"

namespace scda::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[i * d.k + p] * b[p * d.n + j];
      c[i * d.n + j] = acc;
    }
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[i * d.k + p] * b[j * d.k + p];
      c[i * d.n + j] = acc;
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[p * d.m + i] * b[p * d.n + j];
      c[i * d.n + j] = acc;
    }
  }
}

void conv1x1(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d) {
  const std::size_t P = d.positions;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_ch; ++o) {
      for (std::size_t p = 0; p < P; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d.in_ch; ++i) {
          acc += w[o * d.in_ch + i] * x[(n * d.in_ch + i) * P + p];
        }
        if (!bias.empty()) acc += bias[o];
        y[(n * d.out_ch + o) * P + p] = acc;
      }
    }
  }
}

void conv1x1_grad_input(std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx, ConvDims d) {
  const std::size_t P = d.positions;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t i = 0; i < d.in_ch; ++i) {
      for (std::size_t p = 0; p < P; ++p) {
        double acc = 0.0;
        for (std::size_t o = 0; o < d.out_ch; ++o) {
          acc += w[o * d.in_ch + i] * gy[(n * d.out_ch + o) * P + p];
        }
        gx[(n * d.in_ch + i) * P + p] = acc;
      }
    }
  }
}

void conv1x1_grad_params(std::span<const double> gy, std::span<const double> x,
                         std::span<double> gw, std::span<double> gb, ConvDims d) {
  const std::size_t P = d.positions;
  for (std::size_t o = 0; o < d.out_ch; ++o) {
    for (std::size_t i = 0; i < d.in_ch; ++i) {
      double acc = 0.0;
      for (std::size_t n = 0; n < d.batch; ++n) {
        for (std::size_t p = 0; p < P; ++p) {
          acc += gy[(n * d.out_ch + o) * P + p] * x[(n * d.in_ch + i) * P + p];
        }
      }
      gw[o * d.in_ch + i] = acc;
    }
    if (!gb.empty()) {
      double acc = 0.0;
      for (std::size_t n = 0; n < d.batch; ++n) {
        for (std::size_t p = 0; p < P; ++p) acc += gy[(n * d.out_ch + o) * P + p];
      }
      gb[o] = acc;
    }
  }
}

}  // namespace scda::kernels::serial
