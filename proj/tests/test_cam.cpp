#include <doctest.h>

#include <fstream>
#include <iterator>

#include "scda/cam.hpp"
#include "scda/model.hpp"
#include "test_support.hpp"

using namespace scda;
using testing::random_tensor;

namespace {

std::vector<std::uint8_t> quadrant_mask(std::size_t h, std::size_t w, int quadrant) {
  std::vector<std::uint8_t> m(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      m[u * w + v] = ((u >= h / 2) * 2 + (v >= w / 2)) == quadrant;
  return m;
}

}  // namespace

TEST_CASE("compute_cam examples") {
  const CamResult ones = compute_cam(Tensor::filled({1, 3, 3}, 1.0), Tensor({1, 1}, {1.0}));
  for (double v : ones.maps.values()) CHECK(v == 1.0);
  CHECK(ones.logits == std::vector<double>{1.0});

  SplitMix64 rng(1);
  const CamResult zero = compute_cam(random_tensor(rng, {4, 3, 5}), Tensor({2, 4}));
  CHECK(zero.maps == Tensor({2, 3, 5}));
  CHECK(zero.classes() == 2);
  CHECK(zero.height() == 3);
  CHECK(zero.width() == 5);

  CHECK_THROWS_AS(compute_cam(Tensor({4, 3, 5}), Tensor({2, 3})), ShapeError);
}

TEST_CASE("CAM logits equal classifier logits on 1000 random inputs") {
  SplitMix64 rng(1000);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng.below(8), u = 1 + rng.below(8), v = 1 + rng.below(8), c = 2 + rng.below(5);
    const Tensor act = random_tensor(rng, {h, u, v}, 0.0, 3.0);
    const Tensor w = random_tensor(rng, {c, h}, -2.0, 2.0);
    const CamResult cam = compute_cam(act, w);
    const Tensor z = classify(ClassifierParams{w}, act.reshaped({1, h, u, v}));
    for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(cam.logits[k] - z.at(0, k)));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("each map is the weighted channel sum") {
  SplitMix64 rng(2);
  const Tensor act = random_tensor(rng, {3, 2, 4}), w = random_tensor(rng, {2, 3});
  const CamResult cam = compute_cam(act, w);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t p = 0; p < 8; ++p) {
      long double want = 0.0L;
      for (std::size_t h = 0; h < 3; ++h) want += static_cast<long double>(w.at(c, h)) * act[h * 8 + p];
      CHECK(std::abs(cam.maps[c * 8 + p] - static_cast<double>(want)) < 1e-14);
    }
  const Tensor slice = cam_slice(cam, 1);
  CHECK(slice.shape() == Shape{2, 4});
  for (std::size_t p = 0; p < 8; ++p) CHECK(slice[p] == cam.maps[8 + p]);
}

TEST_CASE("concentration examples") {
  const auto mask = quadrant_mask(4, 4, 0);
  Tensor inside({1, 4, 4});
  for (std::size_t p = 0; p < 16; ++p) inside[p] = mask[p] ? 0.5 + p : -1.0;
  const CamResult a{inside, {0.0}};
  CHECK(concentration(a, 0, mask).ratio == 1.0);

  const CamResult flat{Tensor::filled({1, 4, 4}, 2.0), {2.0}};
  CHECK(concentration(flat, 0, quadrant_mask(4, 4, 3)).ratio == 0.25);

  const CamResult negative{Tensor::filled({1, 4, 4}, -1.0), {-1.0}};
  const ConcentrationScore s = concentration(negative, 0, mask);
  CHECK(s.degenerate);
  CHECK(s.ratio == 0.0);

  CHECK_THROWS_AS(concentration(flat, 1, mask), std::out_of_range);
  CHECK_THROWS_AS(concentration(flat, 0, std::vector<std::uint8_t>(15)), ShapeError);
}

TEST_CASE("concentration matches a two-pass sum and is scale invariant") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t h = 2 + rng.below(7), w = 2 + rng.below(7);
    const CamResult cam = compute_cam(random_tensor(rng, {2, h, w}), random_tensor(rng, {3, 2}));
    std::vector<std::uint8_t> mask(h * w);
    for (auto& m : mask) m = rng.below(2);
    const std::size_t cls = rng.below(3);

    long double total = 0.0L;
    for (std::size_t p = 0; p < h * w; ++p) total += std::max(0.0, cam.maps[cls * h * w + p]);
    long double in = 0.0L;
    for (std::size_t p = 0; p < h * w; ++p)
      if (mask[p]) in += std::max(0.0, cam.maps[cls * h * w + p]);

    const ConcentrationScore s = concentration(cam, cls, mask);
    CHECK(s.degenerate == (total == 0.0L));
    if (total > 0.0L) CHECK(std::abs(s.ratio - static_cast<double>(in / total)) < 1e-12);
    CHECK(s.ratio >= 0.0);
    CHECK(s.ratio <= 1.0);

    CamResult scaled = cam;
    for (double& v : scaled.maps.data()) v *= 7.5;
    CHECK(std::abs(concentration(scaled, cls, mask).ratio - s.ratio) < 1e-12);
  }
}

TEST_CASE("upsample_nearest examples") {
  const Tensor up = upsample_nearest(Tensor({1, 1}, {0.3}), 4, 4);
  CHECK(up == Tensor::filled({4, 4}, 0.3));

  SplitMix64 rng(4);
  const Tensor m = random_tensor(rng, {3, 5});
  CHECK(upsample_nearest(m, 3, 5) == m);

  const Tensor checker = upsample_nearest(Tensor({2, 2}, {1, 0, 0, 1}), 4, 4);
  CHECK(checker == Tensor({4, 4}, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1}));

  CHECK_THROWS_AS(upsample_nearest(m, 7, 5), std::invalid_argument);
  CHECK_THROWS_AS(upsample_nearest(Tensor({3}), 3, 3), ShapeError);
}

TEST_CASE("write_pgm emits a P5 header and min-max scaled bytes") {
  testing::TempDir dir("pgm");
  write_pgm(Tensor({2, 3}, {-1, 0, 1, 1, 1, 1}), dir / "a.pgm");
  std::ifstream in(dir / "a.pgm", std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(bytes.substr(0, header.size()) == header);
  const auto px = [&](std::size_t i) { return static_cast<unsigned char>(bytes[header.size() + i]); };
  CHECK(px(0) == 0);
  CHECK(px(1) == 128);
  CHECK(px(2) == 255);

  write_pgm(Tensor::filled({2, 2}, 4.0), dir / "flat.pgm");
  std::ifstream flat(dir / "flat.pgm", std::ios::binary);
  const std::string fb{std::istreambuf_iterator<char>(flat), {}};
  CHECK(fb == std::string("P5\n2 2\n255\n") + std::string(4, '\0'));

  CHECK_THROWS_AS(write_pgm(Tensor({2, 2}), "/nonexistent/dir/x.pgm"), std::runtime_error);
}
