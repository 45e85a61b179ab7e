#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "scda/autodiff.hpp"
#include "scda/kernels.hpp"

namespace scda::ad {

namespace {

Tape& common_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  return a.tape();
}

void require_rank(Var x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class F>
void into(Tape& t, std::size_t id, F&& f) {
  if (t.requires_grad(id)) f(t.accumulator(id));
}

template <class F>
Var unary(Var x, F&& fwd, Tape::BackwardFn bwd) {
  Tensor out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return x.tape().record(std::move(out), {x.id()}, std::move(bwd));
}

}  // namespace

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = common_tape(a, b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor out({m, n});
  kernels::matmul(a.value().data(), b.value().data(), out.data(), {m, k, n});
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ia, [&](Tensor& ga) {
      Tensor d({m, k});
      kernels::matmul_nt(g.data(), tp.value(ib).data(), d.data(), {m, n, k});
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
    });
    into(tp, ib, [&](Tensor& gb) {
      Tensor d({k, n});
      kernels::matmul_tn(tp.value(ia).data(), g.data(), d.data(), {k, m, n});
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i];
    });
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = common_tape(a, b, "matmul_nt");
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n});
  kernels::matmul_nt(a.value().data(), b.value().data(), out.data(), {m, k, n});
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ia, [&](Tensor& ga) {
      Tensor d({m, k});
      kernels::matmul(g.data(), tp.value(ib).data(), d.data(), {m, n, k});
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
    });
    into(tp, ib, [&](Tensor& gb) {
      Tensor d({n, k});
      kernels::matmul_tn(g.data(), tp.value(ia).data(), d.data(), {n, m, k});
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i];
    });
  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  const auto& in = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& ga = tp.accumulator(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = common_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    into(tp, ib, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; });
  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ia, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    into(tp, ib, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; });
  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ia, [&](Tensor& ga) {
      const Tensor& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    into(tp, ib, [&](Tensor& gb) {
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = common_tape(x, bias, "add_bias");
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.shape()[0] != n) {
    throw ShapeError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.value()[i * n + j] + bias.value()[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return t.record(std::move(out), {ix, ib}, [ix, ib, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ix, [&](Tensor& gx) { for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i]; });
    into(tp, ib, [&](Tensor& gb) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += g[i * n + j];
        gb[j] += acc;
      }
    });
  });
}

Var scale(Var x, double s) {
  const std::size_t ix = x.id();
  return unary(x, [s](double v) { return v * s; }, [ix, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
}

Var add_scalar(Var x, double s) {
  const std::size_t ix = x.id();
  return unary(x, [s](double v) { return v + s; }, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var relu(Var x) {
  const std::size_t ix = x.id();
  return unary(x, [](double v) { return v < 0.0 ? 0.0 : v; }, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& xv = tp.value(ix);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var sigmoid(Var x) {
  const std::size_t ix = x.id();
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, f, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& y = tp.value(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var log(Var x) {
  const std::size_t ix = x.id();
  return unary(x, [](double v) { return std::log(std::max(v, kLogFloor)); },
               [ix](Tape& tp, std::size_t self) {
                 const Tensor& g = tp.upstream(self);
                 const Tensor& xv = tp.value(ix);
                 Tensor& gx = tp.accumulator(ix);
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (xv[i] > kLogFloor) gx[i] += g[i] / xv[i];
               });
}

// ---- reductions -----------------------------------------------------------

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(acc), {ix}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor " + shape_str(x.shape()));
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var x, std::size_t axis) {
  require_rank(x, 2, "sum_axis");
  if (axis > 1) throw ShapeError("sum_axis: axis " + std::to_string(axis) + " for " + shape_str(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const auto& v = x.value();
  Tensor out({axis == 0 ? n : m});
  if (axis == 0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += v[i * n + j];
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += v[i * n + j];
      out[i] = acc;
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, m, n, axis](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[axis == 0 ? j : i];
  });
}

Var mean_axis(Var x, std::size_t axis) {
  require_rank(x, 2, "mean_axis");
  const std::size_t count = x.shape()[axis > 1 ? 1 : axis];
  if (count == 0) throw ShapeError("mean_axis: empty axis in " + shape_str(x.shape()));
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(count));
}

// ---- softmax family -------------------------------------------------------

namespace {
void check_temperature(double temperature, const char* op) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument(std::string(op) + ": temperature must be positive, got " +
                                std::to_string(temperature));
  }
}
}  // namespace

Var softmax_rows(Var z, double temperature) {
  check_temperature(temperature, "softmax_rows");
  require_rank(z, 2, "softmax_rows");
  const std::size_t n = z.shape()[0], c = z.shape()[1];
  const double inv_t = 1.0 / temperature;
  const auto& zv = z.value();
  Tensor out(z.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = zv[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, zv[r * c + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(zv[r * c + j] * inv_t - mx * inv_t);
      out[r * c + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= denom;
  }
  const std::size_t iz = z.id();
  return z.tape().record(std::move(out), {iz}, [iz, n, c, inv_t](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& s = tp.value(self);
    Tensor& gz = tp.accumulator(iz);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * s[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += inv_t * s[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Var log_softmax_rows(Var z, double temperature) {
  check_temperature(temperature, "log_softmax_rows");
  require_rank(z, 2, "log_softmax_rows");
  const std::size_t n = z.shape()[0], c = z.shape()[1];
  const double inv_t = 1.0 / temperature;
  const auto& zv = z.value();
  Tensor out(z.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = zv[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, zv[r * c + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(zv[r * c + j] * inv_t - mx * inv_t);
    const double lse = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = zv[r * c + j] * inv_t - mx * inv_t - lse;
  }
  const std::size_t iz = z.id();
  return z.tape().record(std::move(out), {iz}, [iz, n, c, inv_t](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& ls = tp.value(self);
    Tensor& gz = tp.accumulator(iz);
    for (std::size_t r = 0; r < n; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gz[r * c + j] += inv_t * (g[r * c + j] - std::exp(ls[r * c + j]) * gsum);
    }
  });
}

// ---- spatial --------------------------------------------------------------

Var global_average_pool(Var x) {
  require_rank(x, 4, "global_average_pool");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], positions = s[2] * s[3];
  if (positions == 0) throw ShapeError("global_average_pool: empty spatial extent " + shape_str(s));
  const double inv = 1.0 / static_cast<double>(positions);
  Tensor out({n, c});
  const auto& v = x.value();
  for (std::size_t r = 0; r < n * c; ++r) {
    double acc = 0.0;
    for (std::size_t p = 0; p < positions; ++p) acc += v[r * positions + p];
    out[r] = acc * inv;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, n, c, positions, inv](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t r = 0; r < n * c; ++r) {
      const double gr = g[r] * inv;
      for (std::size_t p = 0; p < positions; ++p) gx[r * positions + p] += gr;
    }
  });
}

namespace {
Var conv1x1_impl(Var x, Var weight, const Var* bias) {
  Tape& t = common_tape(x, weight, "conv1x1");
  require_rank(x, 4, "conv1x1");
  require_rank(weight, 2, "conv1x1");
  const auto& s = x.shape();
  const kernels::ConvDims d{s[0], s[1], weight.shape()[0], s[2] * s[3]};
  if (weight.shape()[1] != d.in_ch) {
    throw ShapeError("conv1x1: input " + shape_str(s) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  std::vector<std::size_t> parents{x.id(), weight.id()};
  std::span<const double> bias_values;
  if (bias) {
    common_tape(x, *bias, "conv1x1");
    if (bias->shape() != Shape{d.out_ch}) {
      throw ShapeError("conv1x1: bias " + shape_str(bias->shape()) + " for weight " +
                       shape_str(weight.shape()));
    }
    bias_values = bias->value().data();
    parents.push_back(bias->id());
  }
  Tensor out({d.batch, d.out_ch, s[2], s[3]});
  kernels::conv1x1(x.value().data(), weight.value().data(), bias_values, out.data(), d);
  const std::size_t ix = x.id(), iw = weight.id();
  const bool has_bias = bias != nullptr;
  const std::size_t ib = has_bias ? bias->id() : 0;
  return t.record(std::move(out), std::move(parents), [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    into(tp, ix, [&](Tensor& gx) {
      Tensor dx(tp.value(ix).shape());
      kernels::conv1x1_grad_input(g.data(), tp.value(iw).data(), dx.data(), d);
      for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
    });
    const bool want_w = tp.requires_grad(iw);
    const bool want_b = has_bias && tp.requires_grad(ib);
    if (want_w || want_b) {
      Tensor dw({d.out_ch, d.in_ch});
      Tensor db(Shape{d.out_ch});
      kernels::conv1x1_grad_params(g.data(), tp.value(ix).data(), dw.data(),
                                   want_b ? db.data() : std::span<double>{}, d);
      if (want_w) {
        Tensor& gw = tp.accumulator(iw);
        for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
      }
      if (want_b) {
        Tensor& gb = tp.accumulator(ib);
        for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
      }
    }
  });
}
}  // namespace

Var conv1x1(Var x, Var weight, Var bias) { return conv1x1_impl(x, weight, &bias); }
Var conv1x1(Var x, Var weight) { return conv1x1_impl(x, weight, nullptr); }

Var unfold3x3(Var x) {
  require_rank(x, 4, "unfold3x3");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out({n, 9 * c, h, w});
  const auto& v = x.value();
  // out index -> source index (or none at the zero-padded border)
  auto for_each_tap = [n, c, h, w](auto&& f) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t tap = 0; tap < 9; ++tap) {
          const long dy = static_cast<long>(tap / 3) - 1, dx = static_cast<long>(tap % 3) - 1;
          for (std::size_t u = 0; u < h; ++u)
            for (std::size_t q = 0; q < w; ++q) {
              const long su = static_cast<long>(u) + dy, sq = static_cast<long>(q) + dx;
              if (su < 0 || sq < 0 || su >= static_cast<long>(h) || sq >= static_cast<long>(w)) continue;
              const std::size_t dst = ((b * 9 * c + ch * 9 + tap) * h + u) * w + q;
              const std::size_t src = ((b * c + ch) * h + static_cast<std::size_t>(su)) * w +
                                      static_cast<std::size_t>(sq);
              f(dst, src);
            }
        }
  };
  for_each_tap([&](std::size_t dst, std::size_t src) { out[dst] = v[src]; });
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, for_each_tap](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for_each_tap([&](std::size_t dst, std::size_t src) { gx[src] += g[dst]; });
  });
}

// ---- structural -----------------------------------------------------------

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = parts[0].tape();
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ShapeError("concat: scalar inputs");
  Shape trailing(shape.begin() + 1, shape.end());
  std::size_t rows = 0;
  std::vector<std::size_t> parents;
  for (const Var& p : parts) {
    common_tape(parts[0], p, "concat");
    Shape tr(p.shape().begin() + (p.shape().empty() ? 0 : 1), p.shape().end());
    if (p.shape().empty() || tr != trailing) {
      throw ShapeError("concat: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    rows += p.shape()[0];
    parents.push_back(p.id());
  }
  shape[0] = rows;
  Tensor out(shape);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (offset, length) per part
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<long>(off));
    spans.emplace_back(off, v.size());
    off += v.size();
  }
  return t.record(std::move(out), parents, [parents, spans](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    for (std::size_t k = 0; k < parents.size(); ++k) {
      into(tp, parents[k], [&](Tensor& gp) {
        for (std::size_t i = 0; i < spans[k].second; ++i) gp[i] += g[spans[k].first + i];
      });
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), c});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       shape_str(x.shape()));
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x.value()[idx[r] * c + j];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, idx = std::move(idx), c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gx[idx[r] * c + j] += g[r * c + j];
  });
}

Var pick(Var x, std::span<const std::size_t> cols) {
  require_rank(x, 2, "pick");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (cols.size() != n) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_str(x.shape()));
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  Tensor out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    if (idx[r] >= c) {
      throw std::out_of_range("pick: column " + std::to_string(idx[r]) + " out of range for " +
                              shape_str(x.shape()));
    }
    out[r] = x.value()[r * c + idx[r]];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, idx = std::move(idx), c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * c + idx[r]] += g[r];
  });
}

Var detach(Var x) { return x.tape().constant(x.value()); }

Var grl(Var x, double lambda) {
  const std::size_t ix = x.id();
  return x.tape().record(x.value(), {ix}, [ix, lambda](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.accumulator(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += -lambda * g[i];
  });
}

}  // namespace scda::ad
