#include "scda/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace scda {

Ablation Ablation::parse(const std::string& flags) {
  Ablation a;
  std::stringstream ss(flags);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "no_mi") a.no_mi = true;
    else if (item == "no_pdd_ss") a.no_pdd_ss = true;
    else if (item == "no_pdd_st") a.no_pdd_st = true;
    else if (item == "no_pdd") a.no_pdd = true;
    else throw std::invalid_argument("unknown ablation flag '" + item + "'");
  }
  return a;
}

std::string Ablation::str() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(no_mi, "no_mi");
  add(no_pdd_ss, "no_pdd_ss");
  add(no_pdd_st, "no_pdd_st");
  add(no_pdd, "no_pdd");
  return out;
}

namespace {
void check_probability_vector(std::span<const double> p, const char* what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative or NaN entry");
    total += v;
  }
  if (!(std::abs(total - 1.0) <= 1e-6)) {
    throw std::invalid_argument(std::string(what) + ": entries sum to " + std::to_string(total));
  }
}

double clamped_log(double x) { return std::log(std::max(x, ad::kLogFloor)); }

void check_rows(const Tensor& probs, const char* what) {
  if (probs.rank() != 2) throw ShapeError(std::string(what) + ": expected [n x C], got " + shape_str(probs.shape()));
  const std::size_t c = probs.dim(1);
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    check_probability_vector(probs.data().subspan(r * c, c), what);
  }
}
}  // namespace

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw std::invalid_argument("js_divergence: vectors of length " + std::to_string(p.size()) + " and " +
                                std::to_string(q.size()));
  }
  check_probability_vector(p, "js_divergence(p)");
  check_probability_vector(q, "js_divergence(q)");
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double log_m = clamped_log(0.5 * (p[c] + q[c]));
    kl_p += p[c] * (clamped_log(p[c]) - log_m);
    kl_q += q[c] * (clamped_log(q[c]) - log_m);
  }
  return 0.5 * (kl_p + kl_q);
}

ad::Var js_rows(ad::Var p, ad::Var q) {
  const ad::Var log_m = ad::log(ad::scale(ad::add(p, q), 0.5));
  const ad::Var kl_p = ad::sum_axis(ad::mul(p, ad::sub(ad::log(p), log_m)), 1);
  const ad::Var kl_q = ad::sum_axis(ad::mul(q, ad::sub(ad::log(q), log_m)), 1);
  return ad::scale(ad::add(kl_p, kl_q), 0.5);
}

PddTerms loss_pdd(ad::Var source_logits, ad::Var target_logits, const PairSet& pairs, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("loss_pdd: temperature must be positive");
  ad::Tape& tape = source_logits.tape();
  const double t2 = temperature * temperature;
  const ad::Var qs = ad::softmax_rows(source_logits, temperature);

  auto pair_mean = [&](ad::Var left, ad::Var right, const auto& list) {
    if (list.empty()) return tape.constant(Tensor::scalar(0.0));
    std::vector<std::size_t> a, b;
    a.reserve(list.size());
    b.reserve(list.size());
    for (const auto& [i, j] : list) {
      a.push_back(i);
      b.push_back(j);
    }
    const ad::Var js = js_rows(ad::gather_rows(left, a), ad::gather_rows(right, b));
    return ad::scale(ad::sum(js), t2 / static_cast<double>(list.size()));
  };

  PddTerms out;
  out.ss = pair_mean(qs, qs, pairs.intra);
  if (pairs.inter.empty()) {
    out.st = tape.constant(Tensor::scalar(0.0));
  } else {
    out.st = pair_mean(qs, ad::softmax_rows(target_logits, temperature), pairs.inter);
  }
  return out;
}

ad::Var loss_ce(ad::Var logits, std::span<const std::size_t> labels) {
  if (logits.shape().size() != 2 || labels.size() != logits.shape()[0] || labels.empty()) {
    throw ShapeError("loss_ce: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const std::size_t c = logits.shape()[1];
  for (std::size_t y : labels) {
    if (y >= c) {
      throw std::out_of_range("loss_ce: label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
    }
  }
  return ad::scale(ad::mean(ad::pick(ad::log_softmax_rows(logits), labels)), -1.0);
}

ad::Var loss_mi(ad::Var probs) {
  check_rows(probs.value(), "loss_mi");
  const std::size_t n = probs.shape()[0];
  if (n == 0) throw ShapeError("loss_mi: empty batch");
  const ad::Var marginal = ad::mean_axis(probs, 0);
  const ad::Var h_marginal = ad::scale(ad::sum(ad::mul(marginal, ad::log(marginal))), -1.0);
  const ad::Var neg_h_cond =
      ad::scale(ad::sum(ad::mul(probs, ad::log(probs))), 1.0 / static_cast<double>(n));
  return ad::add(h_marginal, neg_h_cond);
}

ad::Var loss_adv(ad::Var disc_source, ad::Var disc_target) {
  const std::size_t n = disc_source.value().size() + disc_target.value().size();
  if (n == 0) throw ShapeError("loss_adv: no discriminator outputs");
  const ad::Var src = ad::sum(ad::log(disc_source));
  const ad::Var tgt = ad::sum(ad::log(ad::add_scalar(ad::scale(disc_target, -1.0), 1.0)));
  return ad::scale(ad::add(src, tgt), -1.0 / static_cast<double>(n));
}

LossBreakdown total_loss(const LossBreakdown& c, const LossWeights& w, const Ablation& a) {
  if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0) {
    throw std::invalid_argument("total_loss: trade-off weights must be nonnegative");
  }
  LossBreakdown out = c;
  if (a.drops_pdd_ss()) out.pdd_ss = 0.0;
  if (a.drops_pdd_st()) out.pdd_st = 0.0;
  if (a.no_mi) out.mi = 0.0;
  if (w.gamma == 0.0) out.adv = 0.0;
  out.total = out.ce - w.alpha * (out.pdd_ss + out.pdd_st) - w.beta * out.mi + w.gamma * out.adv;
  return out;
}

ad::Var combine(const LossTerms& t, const LossWeights& w) {
  ad::Var total = t.ce;
  if (t.pdd_ss || t.pdd_st) {
    ad::Var pdd = t.pdd_ss && t.pdd_st ? ad::add(*t.pdd_ss, *t.pdd_st) : (t.pdd_ss ? *t.pdd_ss : *t.pdd_st);
    total = ad::sub(total, ad::scale(pdd, w.alpha));
  }
  if (t.mi) total = ad::sub(total, ad::scale(*t.mi, w.beta));
  if (t.adv) total = ad::add(total, ad::scale(*t.adv, w.gamma));
  return total;
}

}  // namespace scda
