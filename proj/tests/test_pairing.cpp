#include <doctest.h>

#include "scda/pairing.hpp"
#include "scda/rng.hpp"

using namespace scda;
using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

TEST_CASE("pseudo_labels examples") {
  CHECK(pseudo_labels(Tensor({1, 3}, {0.1, 0.7, 0.2})) == std::vector<PseudoLabel>{{1, 0.7}});
  CHECK(pseudo_labels(Tensor({1, 2}, {0.5, 0.5})) == std::vector<PseudoLabel>{{0, 0.5}});
  CHECK(pseudo_labels(Tensor({3, 3}, {0, 0, 1, 1, 0, 0, 0, 1, 0})) ==
        std::vector<PseudoLabel>{{2, 1.0}, {0, 1.0}, {1, 1.0}});
}

TEST_CASE("pseudo_labels rejects rows that are not distributions") {
  CHECK_THROWS_AS(pseudo_labels(Tensor({1, 2}, {0.5, 0.6})), std::invalid_argument);
  CHECK_THROWS_AS(pseudo_labels(Tensor({3})), ShapeError);
}

TEST_CASE("build_pairs examples") {
  const std::size_t src3[] = {0, 1, 0};
  PairSet p = build_pairs(src3, {});
  CHECK(p.intra == Pairs{{0, 2}});
  CHECK(p.m_ss() == 1);
  CHECK(p.inter.empty());

  const std::size_t src1[] = {0};
  const PseudoLabel t1[] = {{0, 0.9}};
  p = build_pairs(src1, t1, 0.8);
  CHECK(p.inter == Pairs{{0, 0}});
  CHECK(p.m_st() == 1);

  const std::size_t src2[] = {0, 1};
  const PseudoLabel t2[] = {{0, 0.79}, {1, 0.8}};
  p = build_pairs(src2, t2, 0.8);
  CHECK(p.inter == Pairs{{1, 1}});
  CHECK(p.intra.empty());
}

TEST_CASE("threshold 1 admits only fully confident targets") {
  const std::size_t src[] = {0, 1};
  const PseudoLabel tgt[] = {{0, 1.0}, {1, 0.999}, {0, 0.0}};
  CHECK(build_pairs(src, tgt, 1.0).inter == Pairs{{0, 0}});
  CHECK(build_pairs(src, tgt, 0.0).inter == Pairs{{0, 0}, {0, 2}, {1, 1}});
  CHECK(build_pairs({}, tgt) == PairSet{});
}

namespace {

PairSet brute_force(const std::vector<std::size_t>& ys, const std::vector<PseudoLabel>& pt, double eps) {
  PairSet out;
  for (std::size_t a = 0; a < ys.size(); ++a)
    for (std::size_t b = 0; b < ys.size(); ++b)
      if (a < b && ys[a] == ys[b]) out.intra.emplace_back(a, b);
  for (std::size_t a = 0; a < ys.size(); ++a)
    for (std::size_t b = 0; b < pt.size(); ++b)
      if (ys[a] == pt[b].label && !(pt[b].confidence < eps)) out.inter.emplace_back(a, b);
  return out;
}

struct RandomBatch {
  std::vector<std::size_t> source;
  std::vector<PseudoLabel> target;
};

// Confidences are drawn from a small grid around the threshold so that
// values exactly equal to epsilon occur often.
RandomBatch random_batch(SplitMix64& rng) {
  static constexpr double kGrid[] = {0.25, 0.5, 0.79, 0.7999999999999999, 0.8, 0.8000000000000002, 0.9, 1.0};
  RandomBatch b;
  const std::size_t classes = 1 + rng.below(6);
  const std::size_t ns = rng.below(20), nt = rng.below(20);
  for (std::size_t i = 0; i < ns; ++i) b.source.push_back(rng.below(classes));
  for (std::size_t j = 0; j < nt; ++j) {
    const double conf = rng.below(2) ? kGrid[rng.below(std::size(kGrid))] : rng.uniform();
    b.target.push_back({rng.below(classes), conf});
  }
  return b;
}

}  // namespace

TEST_CASE("build_pairs equals an exhaustive double loop on 500 random batches") {
  SplitMix64 rng(500);
  std::size_t boundary_hits = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const RandomBatch b = random_batch(rng);
    for (const PseudoLabel& p : b.target) boundary_hits += p.confidence == 0.8;
    CHECK(build_pairs(b.source, b.target, 0.8) == brute_force(b.source, b.target, 0.8));
  }
  CHECK(boundary_hits > 100);
}

TEST_CASE("pair invariants hold for random batches and thresholds") {
  SplitMix64 rng(501);
  for (int trial = 0; trial < 300; ++trial) {
    const RandomBatch b = random_batch(rng);
    const double eps = rng.uniform();
    const PairSet p = build_pairs(b.source, b.target, eps);
    for (auto [i, k] : p.intra) {
      CHECK(i < k);
      CHECK(k < b.source.size());
      CHECK(b.source[i] == b.source[k]);
    }
    for (auto [i, j] : p.inter) {
      CHECK(i < b.source.size());
      CHECK(j < b.target.size());
      CHECK(b.source[i] == b.target[j].label);
      CHECK(b.target[j].confidence >= eps);
    }
    CHECK(std::is_sorted(p.intra.begin(), p.intra.end()));
    CHECK(std::is_sorted(p.inter.begin(), p.inter.end()));
    // raising the threshold can only remove inter pairs
    const PairSet stricter = build_pairs(b.source, b.target, std::min(1.0, eps + 0.1));
    CHECK(stricter.m_st() <= p.m_st());
    CHECK(stricter.intra == p.intra);
    // at epsilon 0 every label match counts
    std::size_t matches = 0;
    for (std::size_t y : b.source)
      for (const PseudoLabel& t : b.target) matches += y == t.label;
    CHECK(build_pairs(b.source, b.target, 0.0).m_st() == matches);
  }
}

TEST_CASE("permuting source labels permutes the intra pairs") {
  const std::vector<std::size_t> ys{2, 0, 2, 1, 0};
  const std::vector<std::size_t> swapped{0, 2, 2, 1, 0};  // positions 0 and 1 exchanged
  const PairSet a = build_pairs(ys, {}), b = build_pairs(swapped, {});
  CHECK(a.m_ss() == b.m_ss());
  Pairs mapped;
  auto relabel = [](std::size_t i) { return i == 0 ? 1 : i == 1 ? 0 : i; };
  for (auto [i, k] : a.intra) mapped.emplace_back(std::min(relabel(i), relabel(k)), std::max(relabel(i), relabel(k)));
  std::sort(mapped.begin(), mapped.end());
  CHECK(mapped == b.intra);
}
