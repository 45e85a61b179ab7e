#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "scda/tensor.hpp"

namespace scda {

struct PseudoLabel {
  std::size_t label = 0;
  double confidence = 0.0;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

/// Same-label sample pairs inside one mini-batch.
///   intra: (i, k), i < k, both source, y_i == y_k
///   inter: (i, j), source i, target j, y_i == pseudo_j and conf_j >= epsilon
/// Target-target pairs are never formed.
struct PairSet {
  std::vector<std::pair<std::size_t, std::size_t>> intra;
  std::vector<std::pair<std::size_t, std::size_t>> inter;

  std::size_t m_ss() const { return intra.size(); }
  std::size_t m_st() const { return inter.size(); }

  friend bool operator==(const PairSet&, const PairSet&) = default;
};

inline constexpr double kDefaultConfidenceThreshold = 0.8;

/// Row-wise argmax (lowest index wins ties) and max of a probability matrix
/// [n x C]. Throws std::invalid_argument if a row does not sum to 1 +- 1e-6.
std::vector<PseudoLabel> pseudo_labels(const Tensor& probs);

/// Pairs are emitted in lexicographic index order.
PairSet build_pairs(std::span<const std::size_t> source_labels, std::span<const PseudoLabel> pseudo,
                    double epsilon = kDefaultConfidenceThreshold);

}  // namespace scda
