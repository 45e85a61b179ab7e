#include "scda/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "scda/model.hpp"
#include "scda/objectives.hpp"
#include "scda/rng.hpp"
#include "scda/trainer.hpp"

namespace scda {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed(); });
}

namespace {

/// Normwise error over every tensor fed to it:
/// max |analytic - numeric| / max(max |analytic|, max |numeric|, floor).
class ErrorMeter {
 public:
  void add(const Tensor& analytic, const std::vector<double>& numeric) {
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      diff_ = std::max(diff_, std::abs(analytic[k] - numeric[k]));
      scale_ = std::max({scale_, std::abs(analytic[k]), std::abs(numeric[k])});
    }
  }
  double value() const { return diff_ / scale_; }

 private:
  double diff_ = 0.0;
  double scale_ = kGradcheckFloor;
};

Tensor random_tensor(SplitMix64& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero so a relu kink is never inside the stencil.
Tensor random_signed_away_from_zero(SplitMix64& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double mag = rng.uniform(0.1, 1.0);
    t[k] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

using OpFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

// ---- single ops -----------------------------------------------------------

class OpChecker {
 public:
  OpChecker(const GradcheckOptions& options, std::vector<GradcheckEntry>& out, SplitMix64& rng)
      : opt_(options), out_(out), rng_(rng) {}

  /// Checks d/d(inputs) of sum(op(inputs) * R) for a fixed random R.
  /// `reversal[i]` multiplies the finite difference of input i in the oracle.
  void check(const std::string& name, std::vector<Tensor> inputs, const OpFn& op,
             std::vector<double> reversal = {}) {
    if (reversal.empty()) reversal.assign(inputs.size(), 1.0);

    Tensor weights;
    auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
      ad::Tape tape;
      std::vector<ad::Var> vars;
      for (const Tensor& x : xs) vars.push_back(tape.leaf(x));
      const ad::Var out = op(vars);
      if (weights.empty()) weights = random_tensor(rng_, out.shape(), -1.0, 1.0);
      const ad::Var loss = ad::sum(ad::mul(out, tape.constant(weights)));
      if (grads) {
        tape.backward(loss);
        for (const ad::Var& v : vars) grads->push_back(tape.grad(v));
      }
      return loss.value().item();
    };

    std::vector<Tensor> analytic;
    evaluate(inputs, &analytic);
    ErrorMeter err;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      std::vector<double> numeric(inputs[i].size());
      for (std::size_t k = 0; k < inputs[i].size(); ++k) {
        const double saved = inputs[i][k];
        inputs[i][k] = saved + opt_.step;
        const double up = evaluate(inputs, nullptr);
        inputs[i][k] = saved - opt_.step;
        const double down = evaluate(inputs, nullptr);
        inputs[i][k] = saved;
        numeric[k] = reversal[i] * (up - down) / (2.0 * opt_.step);
      }
      err.add(analytic[i], numeric);
    }
    out_.push_back({name, false, err.value(), opt_.op_tolerance});
  }

 private:
  const GradcheckOptions& opt_;
  std::vector<GradcheckEntry>& out_;
  SplitMix64& rng_;
};

void check_ops(const GradcheckOptions& opt, std::vector<GradcheckEntry>& out, SplitMix64& rng) {
  OpChecker c(opt, out, rng);
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(rng, std::move(s), lo, hi); };
  using V = std::vector<ad::Var>;

  c.check("op.matmul", {r({3, 4}), r({4, 2})}, [](const V& v) { return ad::matmul(v[0], v[1]); });
  c.check("op.matmul_nt", {r({3, 4}), r({2, 4})}, [](const V& v) { return ad::matmul_nt(v[0], v[1]); });
  c.check("op.transpose", {r({3, 4})}, [](const V& v) { return ad::transpose(v[0]); });
  c.check("op.add", {r({2, 3}), r({2, 3})}, [](const V& v) { return ad::add(v[0], v[1]); });
  c.check("op.sub", {r({2, 3}), r({2, 3})}, [](const V& v) { return ad::sub(v[0], v[1]); });
  c.check("op.mul", {r({2, 3}), r({2, 3})}, [](const V& v) { return ad::mul(v[0], v[1]); });
  c.check("op.add_bias", {r({3, 4}), r({4})}, [](const V& v) { return ad::add_bias(v[0], v[1]); });
  c.check("op.scale", {r({2, 3})}, [](const V& v) { return ad::scale(v[0], -2.5); });
  c.check("op.add_scalar", {r({2, 3})}, [](const V& v) { return ad::add_scalar(v[0], 0.7); });
  c.check("op.relu", {random_signed_away_from_zero(rng, {3, 4})}, [](const V& v) { return ad::relu(v[0]); });
  c.check("op.sigmoid", {r({3, 4}, -4.0, 4.0)}, [](const V& v) { return ad::sigmoid(v[0]); });
  c.check("op.log", {r({3, 4}, 0.2, 3.0)}, [](const V& v) { return ad::log(v[0]); });
  c.check("op.sum", {r({3, 4})}, [](const V& v) { return ad::sum(v[0]); });
  c.check("op.mean", {r({3, 4})}, [](const V& v) { return ad::mean(v[0]); });
  c.check("op.sum_axis0", {r({3, 4})}, [](const V& v) { return ad::sum_axis(v[0], 0); });
  c.check("op.sum_axis1", {r({3, 4})}, [](const V& v) { return ad::sum_axis(v[0], 1); });
  c.check("op.mean_axis0", {r({3, 4})}, [](const V& v) { return ad::mean_axis(v[0], 0); });
  c.check("op.mean_axis1", {r({3, 4})}, [](const V& v) { return ad::mean_axis(v[0], 1); });
  c.check("op.softmax_rows_T1", {r({3, 4}, -3.0, 3.0)}, [](const V& v) { return ad::softmax_rows(v[0], 1.0); });
  c.check("op.softmax_rows_T10", {r({3, 4}, -3.0, 3.0)}, [](const V& v) { return ad::softmax_rows(v[0], 10.0); });
  c.check("op.log_softmax_rows_T1", {r({3, 4}, -3.0, 3.0)},
          [](const V& v) { return ad::log_softmax_rows(v[0], 1.0); });
  c.check("op.log_softmax_rows_T10", {r({3, 4}, -3.0, 3.0)},
          [](const V& v) { return ad::log_softmax_rows(v[0], 10.0); });
  c.check("op.global_average_pool", {r({2, 3, 4, 4})}, [](const V& v) { return ad::global_average_pool(v[0]); });
  c.check("op.conv1x1", {r({2, 3, 4, 4}), r({5, 3}), r({5})},
          [](const V& v) { return ad::conv1x1(v[0], v[1], v[2]); });
  c.check("op.conv1x1_nobias", {r({2, 3, 4, 4}), r({5, 3})}, [](const V& v) { return ad::conv1x1(v[0], v[1]); });
  c.check("op.unfold3x3", {r({2, 2, 4, 4})}, [](const V& v) { return ad::unfold3x3(v[0]); });
  c.check("op.concat", {r({2, 3}), r({1, 3}), r({3, 3})}, [](const V& v) { return ad::concat(v); });
  c.check("op.reshape", {r({2, 6})}, [](const V& v) { return ad::reshape(v[0], {3, 4}); });
  c.check("op.gather_rows", {r({4, 3})}, [](const V& v) {
    const std::size_t rows[] = {3, 0, 3, 1};
    return ad::gather_rows(v[0], rows);
  });
  c.check("op.pick", {r({4, 3})}, [](const V& v) {
    const std::size_t cols[] = {2, 0, 1, 2};
    return ad::pick(v[0], cols);
  });
  c.check("op.js_rows_T10", {r({5, 4}, -3.0, 3.0), r({5, 4}, -3.0, 3.0)}, [](const V& v) {
    return ad::scale(js_rows(ad::softmax_rows(v[0], 10.0), ad::softmax_rows(v[1], 10.0)), 100.0);
  });

  // Oracle always expects a reversal of strength 0.5; the mutation flips it.
  const double lambda = 0.5;
  const double graph_lambda = opt.inject_grl_bug ? -lambda : lambda;
  c.check("op.grl", {r({3, 4})}, [graph_lambda](const V& v) { return ad::grl(v[0], graph_lambda); }, {-lambda});
}

// ---- loss terms on a small model ------------------------------------------

struct TinyProblem {
  ScdaModel model;
  LabeledBatch source, target;
  TrainConfig config;
  PairSet pairs;
};

TinyProblem draw_problem(std::uint64_t seed) {
  TinyProblem p;
  p.config.temperature = 10.0;
  p.config.beta = 0.1;
  p.config.gamma = 1.0;
  p.config.epsilon = 0.0;
  p.config.model.extractor.in_channels = 1;
  p.config.model.extractor.hidden = {4};
  p.config.model.extractor.features = 3;
  p.config.model.extractor.local_mixing = true;
  p.config.model.classes = 3;
  p.config.model.discriminator_hidden = 4;
  p.model = init_params(derive_seed(seed, 0x6763), p.config.effective_model());

  SplitMix64 rng(derive_seed(seed, 0x6764));
  // Move away from the fresh init: zero biases put dead units exactly on the
  // relu kink, and near-uniform predictions at T = 10 make the pdd gradients
  // so small that the difference quotient is mostly rounding.
  for (auto& [name, t] : p.model.parameters()) {
    if (name.ends_with(".bias")) {
      *t = random_signed_away_from_zero(rng, t->shape());
    } else if (group_of(name) != ParamGroup::discriminator) {
      const double gain = group_of(name) == ParamGroup::classifier ? 10.0 : 2.0;
      for (std::size_t k = 0; k < t->size(); ++k) (*t)[k] *= gain;
    }
  }
  auto images = [&] { return random_tensor(rng, {4, 1, 4, 4}, 0.0, 1.0); };
  p.source.images = images();
  p.source.labels = std::vector<std::size_t>{0, 1, 2, 0};
  p.source.domain = Domain::source;
  p.target.images = images();
  p.target.domain = Domain::target;

  // Freeze the pairs of the unperturbed model so the stencil never flips them.
  ad::Tape tape;
  const ModelVars vars = bind(tape, p.model);
  p.pairs = build_loss_graph(tape, vars, p.source, p.target, p.config, GraphOptions{}).pairs;
  return p;
}

/// Smallest |input| over every relu of the forward pass (negative when a
/// discriminator logit is saturated).
double kink_margin(const TinyProblem& p) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, p.model);
  double margin = 1e300;
  auto track = [&](const ad::Var& pre) {
    for (double v : pre.value().values()) margin = std::min(margin, std::abs(v));
    return ad::relu(pre);
  };
  for (const LabeledBatch* b : {&p.source, &p.target}) {
    ad::Var x = tape.constant(b->images);
    for (const StageVars& st : vars.extractor) {
      if (st.kind == StageKind::local3x3) x = ad::unfold3x3(x);
      x = track(ad::conv1x1(x, st.weight, st.bias));
    }
    const DiscriminatorVars& d = *vars.discriminator;
    const ad::Var h = track(ad::add_bias(ad::matmul_nt(ad::global_average_pool(x), d.hidden_weight), d.hidden_bias));
    const ad::Var out = ad::add_bias(ad::matmul_nt(h, d.output_weight), d.output_bias);
    // keep the adversarial log terms well clear of their clamp
    for (double v : out.value().values()) margin = std::min(margin, 20.0 - std::abs(v));
  }
  return margin;
}

/// The difference quotient is only meaningful away from relu kinks, so
/// instances with an input closer than this to one are redrawn.
constexpr double kKinkMargin = 1e-3;

TinyProblem make_problem(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    TinyProblem p = draw_problem(attempt == 0 ? seed : derive_seed(seed, attempt));
    if (kink_margin(p) >= kKinkMargin) return p;
  }
}

enum class Term { ce, pdd_ss, pdd_st, mi, adv };
constexpr Term kTerms[] = {Term::ce, Term::pdd_ss, Term::pdd_st, Term::mi, Term::adv};

const char* term_name(Term t) {
  switch (t) {
    case Term::ce: return "ce";
    case Term::pdd_ss: return "pdd_ss";
    case Term::pdd_st: return "pdd_st";
    case Term::mi: return "mi";
    case Term::adv: return "adv";
  }
  return "?";
}

bool reversed(Term t) { return t == Term::pdd_ss || t == Term::pdd_st || t == Term::adv; }

ad::Var term_var(const LossGraph& g, Term t) {
  switch (t) {
    case Term::ce: return g.terms.ce;
    case Term::pdd_ss: return *g.terms.pdd_ss;
    case Term::pdd_st: return *g.terms.pdd_st;
    case Term::mi: return *g.terms.mi;
    case Term::adv: return *g.terms.adv;
  }
  return g.terms.ce;
}

double term_weight(Term t, const LossWeights& w) {
  switch (t) {
    case Term::ce: return 1.0;
    case Term::pdd_ss:
    case Term::pdd_st: return -w.alpha;
    case Term::mi: return -w.beta;
    case Term::adv: return w.gamma;
  }
  return 0.0;
}

void check_terms(const GradcheckOptions& opt, std::vector<GradcheckEntry>& out) {
  TinyProblem p = make_problem(opt.seed);
  GraphOptions graph;
  graph.alpha = 1.0;
  graph.grl_lambda = opt.inject_grl_bug ? -1.0 : 1.0;
  graph.fixed_pairs = p.pairs;
  const double oracle_lambda = 1.0;
  const LossWeights weights{graph.alpha, p.config.beta, p.config.gamma};

  auto forward = [&](const ScdaModel& m, std::vector<Tensor>* grads, std::optional<Term> wrt) {
    ad::Tape tape;
    const ModelVars vars = bind(tape, m);
    const LossGraph g = build_loss_graph(tape, vars, p.source, p.target, p.config, graph);
    std::vector<double> values;
    for (Term t : kTerms) values.push_back(term_var(g, t).value().item());
    if (grads) {
      tape.backward(wrt ? term_var(g, *wrt) : g.total);
      for (const ad::Var& v : vars.all) grads->push_back(tape.grad(v));
    }
    return values;
  };

  // numeric[term][param] = central difference of the forward term value
  const std::size_t n_terms = std::size(kTerms);
  auto params = p.model.parameters();
  std::vector<std::vector<std::vector<double>>> numeric(n_terms, std::vector<std::vector<double>>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].second;
    for (auto& per_term : numeric) per_term[i].resize(theta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double saved = theta[k];
      theta[k] = saved + opt.step;
      const auto up = forward(p.model, nullptr, std::nullopt);
      theta[k] = saved - opt.step;
      const auto down = forward(p.model, nullptr, std::nullopt);
      theta[k] = saved;
      for (std::size_t t = 0; t < n_terms; ++t) numeric[t][i][k] = (up[t] - down[t]) / (2.0 * opt.step);
    }
  }

  auto sign = [&](Term t, std::size_t param) {
    return reversed(t) && group_of(params[param].first) == ParamGroup::extractor ? -oracle_lambda : 1.0;
  };

  for (std::size_t t = 0; t < n_terms; ++t) {
    std::vector<Tensor> analytic;
    forward(p.model, &analytic, kTerms[t]);
    ErrorMeter err;
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<double> expected = numeric[t][i];
      for (double& e : expected) e *= sign(kTerms[t], i);
      err.add(analytic[i], expected);
    }
    out.push_back({std::string("loss.") + term_name(kTerms[t]), true, err.value(), opt.composed_tolerance});
  }

  std::vector<Tensor> analytic;
  forward(p.model, &analytic, std::nullopt);
  ErrorMeter err;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> expected(params[i].second->size(), 0.0);
    for (std::size_t t = 0; t < n_terms; ++t) {
      const double w = term_weight(kTerms[t], weights) * sign(kTerms[t], i);
      for (std::size_t k = 0; k < expected.size(); ++k) expected[k] += w * numeric[t][i][k];
    }
    err.add(analytic[i], expected);
  }
  out.push_back({"loss.total", true, err.value(), opt.composed_tolerance});
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  SplitMix64 rng(derive_seed(options.seed, 0x6763));
  check_ops(options, report.entries, rng);
  check_terms(options, report.entries);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json gradcheck_json(const GradcheckReport& report) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& e : report.entries) {
    checks.push_back({{"name", e.name},
                      {"kind", e.composed ? "composed" : "op"},
                      {"max_rel_error", e.max_rel_error},
                      {"tolerance", e.tolerance},
                      {"passed", e.passed()}});
  }
  return {{"passed", report.passed()}, {"seconds", report.seconds}, {"checks", checks}};
}

std::string gradcheck_text(const GradcheckReport& report) {
  std::string text;
  char line[256];
  for (const auto& e : report.entries) {
    std::snprintf(line, sizeof line, "%s  %-24s max_rel_err=%.3e  tol=%.0e\n", e.passed() ? "PASS" : "FAIL",
                  e.name.c_str(), e.max_rel_error, e.tolerance);
    text += line;
  }
  std::snprintf(line, sizeof line, "%s (%zu checks, %.2f s)\n", report.passed() ? "all checks passed" : "FAILED",
                report.entries.size(), report.seconds);
  return text + line;
}

}  // namespace scda
