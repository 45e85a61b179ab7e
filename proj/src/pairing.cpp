#include "scda/pairing.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace scda {

std::vector<PseudoLabel> pseudo_labels(const Tensor& probs) {
  if (probs.rank() != 2) throw ShapeError("pseudo_labels: expected [n x C], got " + shape_str(probs.shape()));
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  std::vector<PseudoLabel> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    PseudoLabel best{0, probs.at(r, 0)};
    for (std::size_t j = 0; j < c; ++j) {
      const double p = probs.at(r, j);
      total += p;
      if (p > best.confidence) best = {j, p};
    }
    if (!(std::abs(total - 1.0) <= 1e-6)) {
      throw std::invalid_argument("pseudo_labels: row " + std::to_string(r) + " sums to " +
                                  std::to_string(total));
    }
    out.push_back(best);
  }
  return out;
}

PairSet build_pairs(std::span<const std::size_t> source_labels, std::span<const PseudoLabel> pseudo,
                    double epsilon) {
  PairSet ps;
  const std::size_t ns = source_labels.size();
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t k = i + 1; k < ns; ++k) {
      if (source_labels[i] == source_labels[k]) ps.intra.emplace_back(i, k);
    }
    for (std::size_t j = 0; j < pseudo.size(); ++j) {
      if (pseudo[j].confidence >= epsilon && pseudo[j].label == source_labels[i]) ps.inter.emplace_back(i, j);
    }
  }
  return ps;
}

}  // namespace scda
