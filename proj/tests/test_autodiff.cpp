#include <doctest.h>

#include <cmath>
#include <cstring>

#include "scda/autodiff.hpp"
#include "scda/objectives.hpp"
#include "test_support.hpp"

using namespace scda;
using testing::fd_error;
using testing::random_tensor;
using testing::weighted_sum;
using V = std::vector<ad::Var>;

TEST_CASE("matmul examples") {
  ad::Tape t;
  const auto eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  const auto m = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(ad::matmul(eye, m).value() == m.value());
  const auto row = t.constant(Tensor({1, 2}, {1, 0}));
  const auto col = t.constant(Tensor({2, 1}, {2, 5}));
  CHECK(ad::matmul(row, col).value() == Tensor({1, 1}, {2}));
  CHECK_THROWS_AS(ad::matmul(m, row), ShapeError);
}

TEST_CASE("gradient of sum(A B) wrt A is ones * B^T") {
  SplitMix64 rng(3);
  const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5});
  ad::Tape t;
  const auto va = t.leaf(a), vb = t.leaf(b);
  t.backward(ad::sum(ad::matmul(va, vb)));
  const Tensor g = t.grad(va);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t p = 0; p < 4; ++p) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) row_sum += b.at(p, j);
      CHECK(g.at(i, p) == doctest::Approx(row_sum).epsilon(1e-14));
    }
  }
  CHECK(fd_error({a, b}, [](const V& v) { return ad::sum(ad::matmul(v[0], v[1])); }) < 1e-7);
}

TEST_CASE("softmax_rows examples") {
  ad::Tape t;
  auto sm = [&](std::initializer_list<double> z, double temp) {
    return ad::softmax_rows(t.constant(Tensor({1, z.size()}, z)), temp).value();
  };
  const Tensor half = sm({0, 0}, 1.0);
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);

  const Tensor scaled = sm({10, 0}, 10.0), direct = sm({1, 0}, 1.0);
  CHECK(scaled[0] == doctest::Approx(direct[0]).epsilon(1e-15));
  CHECK(scaled[1] == doctest::Approx(direct[1]).epsilon(1e-15));

  const Tensor p = sm({2, 0}, 1.0);
  CHECK(std::abs(p[0] - 0.8808) < 1e-3);
  CHECK(std::abs(p[1] - 0.1192) < 1e-3);
  CHECK(p[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-15));

  CHECK_THROWS_AS(ad::softmax_rows(t.constant(Tensor({1, 2})), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ad::log_softmax_rows(t.constant(Tensor({1, 2})), -1.0), std::invalid_argument);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ad::Tape t;
    const std::size_t c = 2 + rng.below(9);
    const double temp = rng.uniform(0.1, 20.0);
    const Tensor z = random_tensor(rng, {4, c}, -40.0, 40.0);
    const Tensor p = ad::softmax_rows(t.constant(z), temp).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(p.at(r, j) >= 0.0);
        s += p.at(r, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward examples") {
  {
    ad::Tape t;
    const auto x = t.leaf(Tensor({3}, {0.3, -1.0, 2.0}));
    t.backward(ad::sum(x));
    CHECK(t.grad(x) == Tensor({3}, {1, 1, 1}));
  }
  {
    ad::Tape t;
    const auto x = t.leaf(Tensor({2}, {1, 2}));
    t.backward(ad::sum(ad::mul(x, x)));
    CHECK(t.grad(x) == Tensor({2}, {2, 4}));
  }
}

TEST_CASE("backward rejects a non-scalar loss") {
  ad::Tape t;
  const auto x = t.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
}

TEST_CASE("constants never receive gradients and unreached leaves get zeros") {
  ad::Tape t;
  const auto c = t.constant(Tensor({2}, {1, 2}));
  const auto x = t.leaf(Tensor({2}, {3, 4}));
  const auto unused = t.leaf(Tensor({2, 2}));
  const auto prod = ad::mul(c, c);
  CHECK_FALSE(prod.requires_grad());
  t.backward(ad::sum(ad::mul(prod, x)));
  CHECK(t.grad(x) == Tensor({2}, {1, 4}));
  CHECK(t.grad(c) == Tensor({2}));
  CHECK(t.grad(unused) == Tensor({2, 2}));
}

TEST_CASE("gradients have the shape of their variable") {
  SplitMix64 rng(6);
  ad::Tape t;
  const auto w = t.leaf(random_tensor(rng, {3, 2}));
  const auto x = t.leaf(random_tensor(rng, {4, 2, 2, 2}));
  const auto y = ad::global_average_pool(ad::conv1x1(x, w));
  t.backward(ad::sum(y));
  CHECK(t.grad(w).shape() == w.shape());
  CHECK(t.grad(x).shape() == x.shape());
}

TEST_CASE("a shared input accumulates the gradient of every use, each node visited once") {
  ad::Tape t;
  const auto x = t.leaf(Tensor({1}, {3.0}));
  const auto a = ad::scale(x, 2.0);
  const auto b = ad::mul(x, x);
  const auto loss = ad::sum(ad::add(a, b));  // 2x + x^2
  t.backward(loss);
  CHECK(t.grad(x)[0] == 8.0);
  CHECK(t.nodes_visited() == 4);  // scale, mul, add, sum
  CHECK(t.backward_passes() == 1);
}

TEST_CASE("repeated backward on one tape gives bit-identical gradients") {
  SplitMix64 rng(8);
  ad::Tape t;
  const auto x = t.leaf(random_tensor(rng, {5, 4}));
  const auto w = t.leaf(random_tensor(rng, {3, 4}));
  const auto loss = ad::sum(ad::log_softmax_rows(ad::matmul_nt(x, w), 3.0));
  t.backward(loss);
  const Tensor g1 = t.grad(w);
  t.backward(loss);
  const Tensor g2 = t.grad(w);
  CHECK(std::memcmp(g1.values().data(), g2.values().data(), g1.size() * sizeof(double)) == 0);
  CHECK(t.backward_passes() == 2);
}

TEST_CASE("grl is the identity forward and scales the upstream gradient by -lambda") {
  SplitMix64 rng(9);
  const Tensor x0 = random_tensor(rng, {3, 4});
  ad::Tape t;
  const auto x = t.leaf(x0);
  CHECK(ad::grl(x, 1.0).value() == x0);

  const Tensor g0 = random_tensor(rng, {3, 4});
  t.backward(ad::sum(ad::mul(ad::grl(x, 1.0), t.constant(g0))));
  const Tensor g = t.grad(x);
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == -g0[k]);

  ad::Tape t2;
  const auto x2 = t2.leaf(Tensor({3}, {1, 2, 3}));
  t2.backward(ad::sum(ad::grl(x2, 0.5)));
  CHECK(t2.grad(x2) == Tensor({3}, {-0.5, -0.5, -0.5}));
}

TEST_CASE("log clamps at the floor and passes no gradient there") {
  ad::Tape t;
  const auto x = t.leaf(Tensor({3}, {0.0, 1e-20, 2.0}));
  const auto y = ad::log(x);
  CHECK(y.value()[0] == std::log(ad::kLogFloor));
  CHECK(y.value()[1] == std::log(ad::kLogFloor));
  CHECK(y.value()[2] == std::log(2.0));
  t.backward(ad::sum(y));
  CHECK(t.grad(x) == Tensor({3}, {0.0, 0.0, 0.5}));
}

TEST_CASE("index ops validate their indices") {
  ad::Tape t;
  const auto x = t.leaf(Tensor({2, 3}));
  const std::size_t bad_col[] = {0, 3};
  CHECK_THROWS_AS(ad::pick(x, bad_col), std::out_of_range);
  const std::size_t bad_row[] = {2};
  CHECK_THROWS_AS(ad::gather_rows(x, bad_row), ShapeError);
  CHECK_THROWS_AS(ad::reshape(x, {4}), ShapeError);
  CHECK_THROWS_AS(ad::add(x, t.leaf(Tensor({3, 2}))), ShapeError);
}

TEST_CASE("unfold3x3 matches a zero-padded neighbourhood oracle") {
  SplitMix64 rng(10);
  const Tensor x = random_tensor(rng, {2, 3, 4, 5});
  ad::Tape t;
  const Tensor u = ad::unfold3x3(t.constant(x)).value();
  REQUIRE(u.shape() == Shape{2, 27, 4, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 5; ++xx) {
              const int sy = y + dy, sx = xx + dx;
              const double want = (sy < 0 || sy >= 4 || sx < 0 || sx >= 5) ? 0.0 : x[((n * 3 + c) * 4 + sy) * 5 + sx];
              const std::size_t ch = c * 9 + static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
              CHECK(u[((n * 27 + ch) * 4 + y) * 5 + xx] == want);
            }
}

// ---- finite-difference property over every op ------------------------------

namespace {

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  testing::GraphFn fn;
  double lo = -2.0, hi = 2.0;
};

std::vector<OpCase> op_cases() {
  const std::size_t rows[] = {2, 0, 2};
  const std::size_t cols[] = {1, 0, 2};
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](const V& v) { return weighted_sum(ad::matmul(v[0], v[1])); }},
      {"matmul_nt", {{3, 4}, {2, 4}}, [](const V& v) { return weighted_sum(ad::matmul_nt(v[0], v[1])); }},
      {"transpose", {{3, 4}}, [](const V& v) { return weighted_sum(ad::transpose(v[0])); }},
      {"add", {{2, 3}, {2, 3}}, [](const V& v) { return weighted_sum(ad::add(v[0], v[1])); }},
      {"sub", {{2, 3}, {2, 3}}, [](const V& v) { return weighted_sum(ad::sub(v[0], v[1])); }},
      {"mul", {{2, 3}, {2, 3}}, [](const V& v) { return weighted_sum(ad::mul(v[0], v[1])); }},
      {"add_bias", {{3, 4}, {4}}, [](const V& v) { return weighted_sum(ad::add_bias(v[0], v[1])); }},
      {"scale", {{2, 3}}, [](const V& v) { return weighted_sum(ad::scale(v[0], -1.7)); }},
      {"add_scalar", {{2, 3}}, [](const V& v) { return weighted_sum(ad::add_scalar(v[0], 0.4)); }},
      {"relu", {{3, 4}}, [](const V& v) { return weighted_sum(ad::relu(v[0])); }},
      {"sigmoid", {{3, 4}}, [](const V& v) { return weighted_sum(ad::sigmoid(v[0])); }},
      {"log", {{3, 4}}, [](const V& v) { return weighted_sum(ad::log(v[0])); }, 0.05, 2.0},
      {"sum", {{3, 4}}, [](const V& v) { return ad::scale(ad::sum(v[0]), 1.3); }},
      {"mean", {{3, 4}}, [](const V& v) { return ad::scale(ad::mean(v[0]), 1.3); }},
      {"sum_axis0", {{3, 4}}, [](const V& v) { return weighted_sum(ad::sum_axis(v[0], 0)); }},
      {"sum_axis1", {{3, 4}}, [](const V& v) { return weighted_sum(ad::sum_axis(v[0], 1)); }},
      {"mean_axis0", {{3, 4}}, [](const V& v) { return weighted_sum(ad::mean_axis(v[0], 0)); }},
      {"mean_axis1", {{3, 4}}, [](const V& v) { return weighted_sum(ad::mean_axis(v[0], 1)); }},
      {"softmax_T1", {{3, 4}}, [](const V& v) { return weighted_sum(ad::softmax_rows(v[0], 1.0)); }},
      {"softmax_T10", {{3, 4}}, [](const V& v) { return weighted_sum(ad::softmax_rows(v[0], 10.0)); }},
      {"log_softmax_T1", {{3, 4}}, [](const V& v) { return weighted_sum(ad::log_softmax_rows(v[0], 1.0)); }},
      {"log_softmax_T10", {{3, 4}}, [](const V& v) { return weighted_sum(ad::log_softmax_rows(v[0], 10.0)); }},
      {"global_average_pool", {{2, 3, 2, 3}}, [](const V& v) { return weighted_sum(ad::global_average_pool(v[0])); }},
      {"conv1x1", {{2, 3, 2, 2}, {4, 3}, {4}}, [](const V& v) { return weighted_sum(ad::conv1x1(v[0], v[1], v[2])); }},
      {"conv1x1_nobias", {{2, 3, 2, 2}, {4, 3}}, [](const V& v) { return weighted_sum(ad::conv1x1(v[0], v[1])); }},
      {"unfold3x3", {{1, 2, 3, 3}}, [](const V& v) { return weighted_sum(ad::unfold3x3(v[0])); }},
      {"concat", {{2, 3}, {1, 3}}, [](const V& v) { return weighted_sum(ad::concat(v)); }},
      {"reshape", {{2, 6}}, [](const V& v) { return weighted_sum(ad::reshape(v[0], {4, 3})); }},
      {"gather_rows", {{3, 2}}, [rows](const V& v) { return weighted_sum(ad::gather_rows(v[0], rows)); }},
      {"pick", {{3, 3}}, [cols](const V& v) { return weighted_sum(ad::pick(v[0], cols)); }},
      {"js_rows", {{3, 4}, {3, 4}},
       [](const V& v) { return weighted_sum(js_rows(ad::softmax_rows(v[0], 1.0), ad::softmax_rows(v[1], 1.0))); }},
      {"grl_forward_value", {{2, 3}}, [](const V& v) { return weighted_sum(ad::detach(v[0])); }},
  };
}

}  // namespace

TEST_CASE("every op matches central differences over 100 random trials") {
  SplitMix64 rng(2024);
  for (const OpCase& op : op_cases()) {
    if (std::string(op.name) == "grl_forward_value") continue;  // detach has no gradient by design
    CAPTURE(op.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Tensor> inputs;
      for (const Shape& s : op.shapes) inputs.push_back(random_tensor(rng, s, op.lo, op.hi));
      worst = std::max(worst, fd_error(inputs, op.fn));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("detach blocks the gradient") {
  ad::Tape t;
  const auto x = t.leaf(Tensor({2}, {1, 2}));
  t.backward(ad::sum(ad::add(ad::detach(x), x)));
  CHECK(t.grad(x) == Tensor({2}, {1, 1}));
}
