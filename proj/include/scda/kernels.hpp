#pragma once

// Dense inner loops used by the autodiff ops.
//
// Every kernel exists twice: `serial::` is the plain reference loop nest and
// `parallel::` is the OpenMP version. Both accumulate each output element
// over the reduction index in the same increasing order, so results are
// bitwise identical (the build disables FP contraction). The unqualified
// entry points dispatch to the parallel version once the work is large
// enough to amortize a thread team.

#include <cstddef>
#include <span>

namespace scda::kernels {

struct MatDims {
  std::size_t m, k, n;
};

// 1x1 convolution over an NCP volume (P = H*W spatial positions).
struct ConvDims {
  std::size_t batch, in_ch, out_ch, positions;
};

namespace serial {
// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);

void conv1x1(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d);
void conv1x1_grad_input(std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx, ConvDims d);
// gb may be empty when the stage has no bias.
void conv1x1_grad_params(std::span<const double> gy, std::span<const double> x,
                         std::span<double> gw, std::span<double> gb, ConvDims d);
}  // namespace serial

namespace parallel {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);

void conv1x1(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d);
void conv1x1_grad_input(std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx, ConvDims d);
void conv1x1_grad_params(std::span<const double> gy, std::span<const double> x,
                         std::span<double> gw, std::span<double> gb, ConvDims d);
}  // namespace parallel

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, MatDims d);
void conv1x1(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d);
void conv1x1_grad_input(std::span<const double> gy, std::span<const double> w,
                        std::span<double> gx, ConvDims d);
void conv1x1_grad_params(std::span<const double> gy, std::span<const double> x,
                         std::span<double> gw, std::span<double> gb, ConvDims d);

/// Multiply-add count above which the dispatchers use the OpenMP path.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

/// Thread count for the calling thread's subsequent parallel regions.
/// No-op without OpenMP.
void set_num_threads(int n);
int max_threads();

}  // namespace scda::kernels
