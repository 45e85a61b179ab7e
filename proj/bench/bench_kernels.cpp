// Wall-clock comparison of the serial and OpenMP kernels.
//
//   bench_kernels [--reps N] [--threads T]
//
// Each line reports the best-of-N time of both variants and whether their
// outputs agree bit for bit.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "scda/kernels.hpp"
#include "scda/rng.hpp"

using namespace scda;
namespace k = scda::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, SplitMix64& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double best_ms(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const char* name, int reps, std::vector<double>& out_s, std::vector<double>& out_p,
            const std::function<void(std::vector<double>&)>& serial,
            const std::function<void(std::vector<double>&)>& parallel) {
  const double ts = best_ms(reps, [&] { serial(out_s); });
  const double tp = best_ms(reps, [&] { parallel(out_p); });
  const bool same = std::memcmp(out_s.data(), out_p.data(), out_s.size() * sizeof(double)) == 0;
  std::printf("%-22s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   bitwise %s\n", name, ts, tp, ts / tp,
              same ? "equal" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--reps") == 0) reps = std::stoi(argv[i + 1]);
    else if (std::strcmp(argv[i], "--threads") == 0) k::set_num_threads(std::stoi(argv[i + 1]));
  }
  std::printf("threads: %d\n", k::max_threads());
  SplitMix64 rng(42);

  {
    const k::MatDims d{256, 256, 256};
    const auto a = random_vec(d.m * d.k, rng), b = random_vec(d.k * d.n, rng), bt = random_vec(d.n * d.k, rng);
    const auto at = random_vec(d.k * d.m, rng);
    std::vector<double> cs(d.m * d.n), cp(d.m * d.n);
    report("matmul 256^3", reps, cs, cp, [&](auto& c) { k::serial::matmul(a, b, c, d); },
           [&](auto& c) { k::parallel::matmul(a, b, c, d); });
    report("matmul_nt 256^3", reps, cs, cp, [&](auto& c) { k::serial::matmul_nt(a, bt, c, d); },
           [&](auto& c) { k::parallel::matmul_nt(a, bt, c, d); });
    report("matmul_tn 256^3", reps, cs, cp, [&](auto& c) { k::serial::matmul_tn(at, b, c, d); },
           [&](auto& c) { k::parallel::matmul_tn(at, b, c, d); });
  }
  {
    // one training batch of the default model: 32 images, 16x16, 16 -> 8 channels
    const k::ConvDims d{64, 16, 8, 256};
    const auto x = random_vec(d.batch * d.in_ch * d.positions, rng);
    const auto w = random_vec(d.out_ch * d.in_ch, rng), bias = random_vec(d.out_ch, rng);
    const auto gy = random_vec(d.batch * d.out_ch * d.positions, rng);
    std::vector<double> ys(d.batch * d.out_ch * d.positions), yp(ys.size());
    report("conv1x1", reps, ys, yp, [&](auto& y) { k::serial::conv1x1(x, w, bias, y, d); },
           [&](auto& y) { k::parallel::conv1x1(x, w, bias, y, d); });
    std::vector<double> gs(x.size()), gp(x.size());
    report("conv1x1_grad_input", reps, gs, gp, [&](auto& g) { k::serial::conv1x1_grad_input(gy, w, g, d); },
           [&](auto& g) { k::parallel::conv1x1_grad_input(gy, w, g, d); });
    std::vector<double> ws(w.size() + bias.size()), wp(ws.size());
    auto grad_params = [&](auto fn) {
      return [&, fn](std::vector<double>& out) {
        fn(gy, x, std::span<double>(out).first(w.size()), std::span<double>(out).subspan(w.size()), d);
      };
    };
    report("conv1x1_grad_params", reps, ws, wp, grad_params(k::serial::conv1x1_grad_params),
           grad_params(k::parallel::conv1x1_grad_params));
  }
  return 0;
}
