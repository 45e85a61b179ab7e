#pragma once

// Loss terms of the adaptation objective
//
//   total = ce - alpha * (pdd_ss + pdd_st) - beta * mi + gamma * adv
//
// All logarithms are natural and clamp their argument at ad::kLogFloor.
// The pdd terms are meant to be evaluated on logits computed from features
// that went through a gradient reversal layer, so one backward pass makes the
// classifier ascend pdd while the extractor descends it.

#include <optional>
#include <span>
#include <string>

#include "scda/autodiff.hpp"
#include "scda/pairing.hpp"

namespace scda {

struct LossBreakdown {
  double ce = 0.0;
  double pdd_ss = 0.0;
  double pdd_st = 0.0;
  double mi = 0.0;
  double adv = 0.0;
  double total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.0;
};

/// Loss-removal variants. no_pdd removes both pdd terms.
struct Ablation {
  bool no_mi = false;
  bool no_pdd_ss = false;
  bool no_pdd_st = false;
  bool no_pdd = false;

  bool drops_pdd_ss() const { return no_pdd || no_pdd_ss; }
  bool drops_pdd_st() const { return no_pdd || no_pdd_st; }

  /// Comma-separated flag list, e.g. "no_pdd,no_mi"; empty string = none.
  static Ablation parse(const std::string& flags);
  std::string str() const;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

/// JS(p, q) = KL(p||m)/2 + KL(q||m)/2 with m = (p + q)/2. Inputs must be
/// probability vectors of equal length (sum 1 +- 1e-6, nonnegative).
double js_divergence(std::span<const double> p, std::span<const double> q);

/// Row-wise JS divergence of two [m x C] probability matrices -> [m].
ad::Var js_rows(ad::Var p, ad::Var q);

struct PddTerms {
  ad::Var ss;
  ad::Var st;
};

/// pdd_ss = T^2 / m_ss * sum_intra JS(q_i, q_k)
/// pdd_st = T^2 / m_st * sum_inter JS(q_i, q_j)
/// with q = softmax(logits / T). A term without pairs is the constant 0.
PddTerms loss_pdd(ad::Var source_logits, ad::Var target_logits, const PairSet& pairs, double temperature);

/// Mean source cross-entropy at temperature 1.
ad::Var loss_ce(ad::Var logits, std::span<const std::size_t> labels);

/// H(mean_j p_j) - mean_j H(p_j) over target probability rows [n x C].
ad::Var loss_mi(ad::Var probs);

/// Binary cross-entropy of discriminator outputs, source = 1 and target = 0,
/// averaged over all n_s + n_t samples.
ad::Var loss_adv(ad::Var disc_source, ad::Var disc_target);

/// Applies weights and ablations to already-evaluated components. Ablated
/// terms are zeroed in the result so the total identity holds as stated.
LossBreakdown total_loss(const LossBreakdown& components, const LossWeights& weights,
                         const Ablation& ablation);

/// Graph-level counterpart: absent terms are skipped.
struct LossTerms {
  ad::Var ce;
  std::optional<ad::Var> pdd_ss, pdd_st, mi, adv;
};
ad::Var combine(const LossTerms& terms, const LossWeights& weights);

}  // namespace scda
