#include "scda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "scda/cam.hpp"
#include "scda/config.hpp"
#include "scda/rng.hpp"

namespace scda {

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("train: temperature must be positive");
  if (alpha0 < 0.0 || beta < 0.0 || gamma < 0.0) throw std::invalid_argument("train: alpha0, beta, gamma must be >= 0");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("train: epsilon must be in [0, 1]");
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be at least 2");
  if (!(lr0 >= 0.0) || !(momentum >= 0.0)) throw std::invalid_argument("train: lr0 and momentum must be >= 0");
  if (eval_interval == 0) throw std::invalid_argument("train: eval_interval must be positive");
}

ModelConfig TrainConfig::effective_model() const {
  ModelConfig m = model;
  m.discriminator = gamma > 0.0;
  return m;
}

namespace {
double progress(std::size_t step, const TrainConfig& c) {
  if (c.total_steps == 0) return 0.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(c.total_steps));
}
}  // namespace

double lr_at(std::size_t step, const TrainConfig& c) {
  return c.lr0 * std::pow(1.0 + c.lr_a * progress(step, c), -c.lr_b);
}

double alpha_at(std::size_t step, const TrainConfig& c) { return c.alpha0 * progress(step, c); }

double adv_reversal_at(std::size_t step, const TrainConfig& c) {
  return 2.0 / (1.0 + std::exp(-10.0 * progress(step, c))) - 1.0;
}

OptimizerState OptimizerState::zeros_like(const ScdaModel& model) {
  OptimizerState s;
  for (const auto& [name, t] : model.parameters()) s.velocity.emplace_back(t->shape());
  return s;
}

// ---- graph ----------------------------------------------------------------

LossGraph build_loss_graph(ad::Tape& tape, const ModelVars& vars, const LabeledBatch& source,
                           const LabeledBatch& target, const TrainConfig& config, const GraphOptions& options) {
  if (!source.labels) throw std::invalid_argument("build_loss_graph: source batch has no labels");
  const std::vector<std::size_t>& labels = *source.labels;
  const Ablation& abl = config.ablation;

  const ad::Var f_s = ad::global_average_pool(extract(vars.extractor, tape.constant(source.images)));
  const ad::Var f_t = ad::global_average_pool(extract(vars.extractor, tape.constant(target.images)));

  LossGraph g;
  const ad::Var z_s = logits_from_features(vars.classifier, f_s);
  const ad::Var z_t = logits_from_features(vars.classifier, f_t);
  g.terms.ce = loss_ce(z_s, labels);
  const ad::Var p_t = ad::softmax_rows(z_t, 1.0);
  g.pseudo = pseudo_labels(p_t.value());
  g.pairs = options.fixed_pairs ? *options.fixed_pairs : build_pairs(labels, g.pseudo, config.epsilon);

  if (!abl.no_mi) g.terms.mi = loss_mi(p_t);

  if (!abl.drops_pdd_ss() || !abl.drops_pdd_st()) {
    PairSet used = g.pairs;
    if (abl.drops_pdd_ss()) used.intra.clear();
    if (abl.drops_pdd_st()) used.inter.clear();
    const ad::Var zs_rev = logits_from_features(vars.classifier, ad::grl(f_s, options.grl_lambda));
    const ad::Var zt_rev = used.inter.empty() ? zs_rev
                                              : logits_from_features(vars.classifier, ad::grl(f_t, options.grl_lambda));
    const PddTerms pdd = loss_pdd(zs_rev, zt_rev, used, config.temperature);
    if (!abl.drops_pdd_ss()) g.terms.pdd_ss = pdd.ss;
    if (!abl.drops_pdd_st()) g.terms.pdd_st = pdd.st;
  }

  if (config.gamma > 0.0) {
    if (!vars.discriminator) throw std::invalid_argument("build_loss_graph: gamma > 0 needs a discriminator");
    const double lambda = options.grl_lambda * options.adv_reversal;
    const ad::Var d_s = discriminate(*vars.discriminator, ad::grl(f_s, lambda));
    const ad::Var d_t = discriminate(*vars.discriminator, ad::grl(f_t, lambda));
    g.terms.adv = loss_adv(d_s, d_t);
  }

  const LossWeights weights{options.alpha, config.beta, config.gamma};
  g.total = combine(g.terms, weights);

  auto val = [](const std::optional<ad::Var>& v) { return v ? v->value().item() : 0.0; };
  LossBreakdown parts;
  parts.ce = g.terms.ce.value().item();
  parts.pdd_ss = val(g.terms.pdd_ss);
  parts.pdd_st = val(g.terms.pdd_st);
  parts.mi = val(g.terms.mi);
  parts.adv = val(g.terms.adv);
  g.breakdown = total_loss(parts, weights, abl);
  return g;
}

// ---- training -------------------------------------------------------------

namespace {
void check_batches(const LabeledBatch& source, const LabeledBatch& target) {
  if (source.size() < 2 || target.size() < 2) throw std::invalid_argument("train_step: batches need >= 2 samples");
}

bool finite(const LossBreakdown& b) {
  for (double v : {b.ce, b.pdd_ss, b.pdd_st, b.mi, b.adv, b.total})
    if (!std::isfinite(v)) return false;
  return true;
}

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"ce", b.ce}, {"pdd_ss", b.pdd_ss}, {"pdd_st", b.pdd_st},
          {"mi", b.mi}, {"adv", b.adv},       {"total", b.total}};
}
}  // namespace

StepResult train_step(ScdaModel& model, OptimizerState& state, const LabeledBatch& source,
                      const LabeledBatch& target, const TrainConfig& config, std::size_t step,
                      const StepControl& control) {
  check_batches(source, target);
  ad::Tape tape;
  const ModelVars vars = bind(tape, model);
  GraphOptions opts;
  opts.alpha = control.alpha.value_or(alpha_at(step, config));
  opts.adv_reversal = adv_reversal_at(step, config);
  const LossGraph g = build_loss_graph(tape, vars, source, target, config, opts);

  StepResult res;
  res.losses = g.breakdown;
  res.diagnostics.alpha = opts.alpha;
  res.diagnostics.lr = control.lr.value_or(lr_at(step, config));
  res.diagnostics.m_ss = g.pairs.m_ss();
  res.diagnostics.m_st = g.pairs.m_st();

  if (!finite(g.breakdown) || !std::isfinite(g.total.value().item())) {
    nlohmann::json diag = {{"step", step},
                           {"alpha", opts.alpha},
                           {"losses", breakdown_json(g.breakdown)},
                           {"m_ss", g.pairs.m_ss()},
                           {"m_st", g.pairs.m_st()}};
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(step), std::move(diag));
  }

  tape.backward(g.total);
  res.diagnostics.backward_passes = tape.backward_passes();

  auto params = model.parameters();
  if (state.velocity.size() != params.size()) state = OptimizerState::zeros_like(model);
  const double lr = res.diagnostics.lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamGroup group = group_of(params[i].first);
    if ((group == ParamGroup::extractor && !control.update_extractor) ||
        (group == ParamGroup::classifier && !control.update_classifier) ||
        (group == ParamGroup::discriminator && !control.update_discriminator)) {
      continue;
    }
    const Tensor grad = tape.grad(vars.all[i]);
    Tensor& v = state.velocity[i];
    Tensor& theta = *params[i].second;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = config.momentum * v[k] + grad[k];
      theta[k] -= lr * v[k];
    }
  }
  return res;
}

LossBreakdown evaluate_losses(const ScdaModel& model, const LabeledBatch& source, const LabeledBatch& target,
                              const TrainConfig& config, std::size_t step) {
  check_batches(source, target);
  ad::Tape tape;
  const ModelVars vars = bind(tape, model);
  GraphOptions opts;
  opts.alpha = alpha_at(step, config);
  return build_loss_graph(tape, vars, source, target, config, opts).breakdown;
}

// ---- evaluation -----------------------------------------------------------

namespace {
constexpr std::size_t kEvalChunk = 256;

template <class F>
void for_each_chunk(const Dataset& data, std::size_t limit, F&& f) {
  for (std::size_t start = 0; start < limit; start += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, limit - start));
    std::iota(idx.begin(), idx.end(), start);
    f(idx, make_batch(data, idx));
  }
}
}  // namespace

EvalResult evaluate(const ScdaModel& model, const Dataset& data) {
  if (!data.labeled()) throw std::invalid_argument("evaluate: dataset has unlabeled samples");
  const std::size_t c = model.classes(), n = data.size();
  if (data.classes != c) {
    throw std::invalid_argument("evaluate: dataset has " + std::to_string(data.classes) + " classes, model " +
                                std::to_string(c));
  }
  EvalResult r;
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  r.logits = Tensor({n, c});
  r.predictions.resize(n);
  for_each_chunk(data, n, [&](const std::vector<std::size_t>& idx, const LabeledBatch& b) {
    const Tensor logits = classify(model.classifier, extract(model.extractor, b.images));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < c; ++j) {
        r.logits.at(idx[k], j) = logits.at(k, j);
        if (logits.at(k, j) > logits.at(k, best)) best = j;
      }
      r.predictions[idx[k]] = best;
      ++r.confusion[data.labels[idx[k]]][best];
    }
  });
  std::size_t hits = 0;
  for (std::size_t j = 0; j < c; ++j) hits += r.confusion[j][j];
  r.accuracy = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  return r;
}

double mean_concentration(const ScdaModel& model, const Dataset& data, std::size_t max_samples) {
  const std::size_t count = std::min(max_samples, data.size());
  if (count == 0) return 0.0;
  const std::size_t hw = data.pixels_per_image(), feats = model.features();
  double total = 0.0;
  for_each_chunk(data, count, [&](const std::vector<std::size_t>& idx, const LabeledBatch& b) {
    const Tensor act = extract(model.extractor, b.images);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::uint8_t label = data.labels[idx[k]];
      if (label == kAbsentLabel) throw std::invalid_argument("mean_concentration: unlabeled sample");
      auto first = act.values().begin() + static_cast<long>(k * feats * hw);
      const Tensor one({feats, data.height, data.width},
                       std::vector<double>(first, first + static_cast<long>(feats * hw)));
      const CamResult cam = compute_cam(one, model.classifier.weight);
      total += concentration(cam, label, std::span<const std::uint8_t>(data.masks).subspan(idx[k] * hw, hw)).ratio;
    }
  });
  return total / static_cast<double>(count);
}

// ---- run ------------------------------------------------------------------

namespace {
class EpochCursor {
 public:
  EpochCursor(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
      : data_(data), batch_size_(batch_size), seed_(seed) {
    if (data.size() < batch_size) {
      throw std::invalid_argument("dataset of " + std::to_string(data.size()) + " samples is smaller than batch size " +
                                  std::to_string(batch_size));
    }
    per_epoch_ = data.size() / batch_size;
  }

  LabeledBatch at(std::size_t step) {
    const std::size_t epoch = step / per_epoch_;
    if (!order_ || epoch != epoch_) {
      order_ = batch_indices(data_.size(), batch_size_, seed_, epoch);
      epoch_ = epoch;
    }
    return make_batch(data_, (*order_)[step % per_epoch_]);
  }

 private:
  const Dataset& data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t per_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::optional<std::vector<std::vector<std::size_t>>> order_;
};
}  // namespace

RunReport run(const TrainConfig& config, const RunData& data,
              const std::function<void(const IntervalMetrics&)>& on_interval) {
  config.validate();
  RunReport report;
  report.config = config;
  report.model = init_params(derive_seed(config.seed, 0x11), config.effective_model());
  OptimizerState state = OptimizerState::zeros_like(report.model);
  EpochCursor source(data.source_train, config.batch_size, derive_seed(config.seed, 0x5));
  EpochCursor target(data.target_train, config.batch_size, derive_seed(config.seed, 0x7));

  auto record = [&](std::size_t step, const LossBreakdown& losses) {
    IntervalMetrics m;
    m.step = step;
    m.losses = losses;
    m.target_acc = evaluate(report.model, data.target_eval).accuracy;
    m.mean_concentration = mean_concentration(report.model, data.target_eval, config.concentration_samples);
    report.intervals.push_back(m);
    if (on_interval) on_interval(m);
  };

  record(0, evaluate_losses(report.model, source.at(0), target.at(0), config, 0));
  for (std::size_t step = 0; step < config.total_steps; ++step) {
    const StepResult r = train_step(report.model, state, source.at(step), target.at(step), config, step);
    if ((step + 1) % config.eval_interval == 0 || step + 1 == config.total_steps) record(step + 1, r.losses);
  }
  report.final_eval = evaluate(report.model, data.target_eval);
  report.final_concentration = mean_concentration(report.model, data.target_eval, config.concentration_samples);
  return report;
}

nlohmann::json report_json(const RunReport& report) {
  nlohmann::json intervals = nlohmann::json::array();
  for (const auto& m : report.intervals) {
    nlohmann::json row = breakdown_json(m.losses);
    row["step"] = m.step;
    row["target_acc"] = m.target_acc;
    row["mean_concentration"] = m.mean_concentration;
    intervals.push_back(std::move(row));
  }
  return {{"config", to_json(report.config)},
          {"intervals", std::move(intervals)},
          {"final",
           {{"target_acc", report.final_eval.accuracy},
            {"mean_concentration", report.final_concentration},
            {"confusion", report.final_eval.confusion}}}};
}

std::string loss_csv(const RunReport& report) {
  std::ostringstream os;
  os << "step,ce,pdd_ss,pdd_st,mi,adv,total,target_acc,mean_concentration\n";
  char buf[512];
  for (const auto& m : report.intervals) {
    const auto& l = m.losses;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.step, l.ce, l.pdd_ss,
                  l.pdd_st, l.mi, l.adv, l.total, m.target_acc, m.mean_concentration);
    os << buf;
  }
  return os.str();
}

// ---- probe ----------------------------------------------------------------

namespace {
double pdd_with_pairs(const ScdaModel& model, const LabeledBatch& source, const LabeledBatch& target,
                      const TrainConfig& config, const PairSet& pairs) {
  ad::Tape tape;
  const ModelVars vars = bind(tape, model);
  GraphOptions opts;
  opts.alpha = config.alpha0;
  opts.fixed_pairs = pairs;
  const LossGraph g = build_loss_graph(tape, vars, source, target, config, opts);
  return g.breakdown.pdd_ss + g.breakdown.pdd_st;
}

// One plain step of one parameter group on -alpha0 * (pdd_ss + pdd_st) alone,
// i.e. the PDD share of the total loss, still routed through the GRL.
ScdaModel pdd_term_step(const ScdaModel& model, const LabeledBatch& source, const LabeledBatch& target,
                        const TrainConfig& config, const PairSet& pairs, ParamGroup moved, double step_size) {
  ScdaModel out = model;
  ad::Tape tape;
  const ModelVars vars = bind(tape, model);
  GraphOptions opts;
  opts.alpha = config.alpha0;
  opts.fixed_pairs = pairs;
  const LossGraph g = build_loss_graph(tape, vars, source, target, config, opts);
  std::optional<ad::Var> pdd;
  for (const auto& term : {g.terms.pdd_ss, g.terms.pdd_st}) {
    if (term) pdd = pdd ? ad::add(*pdd, *term) : *term;
  }
  if (!pdd) return out;
  tape.backward(ad::scale(*pdd, -config.alpha0));
  auto params = out.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (group_of(params[i].first) != moved) continue;
    const Tensor grad = tape.grad(vars.all[i]);
    Tensor& theta = *params[i].second;
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= step_size * grad[k];
  }
  return out;
}
}  // namespace

SignProbe adversarial_sign_probe(const ScdaModel& model, const LabeledBatch& source, const LabeledBatch& target,
                                 const TrainConfig& config, double step_size) {
  SignProbe probe;
  PairSet pairs;
  {
    ad::Tape tape;
    const ModelVars vars = bind(tape, model);
    GraphOptions opts;
    opts.alpha = config.alpha0;
    pairs = build_loss_graph(tape, vars, source, target, config, opts).pairs;
  }
  probe.m_ss = pairs.m_ss();
  probe.m_st = pairs.m_st();
  probe.pdd_before = pdd_with_pairs(model, source, target, config, pairs);

  TrainConfig plain = config;
  plain.momentum = 0.0;
  auto moved = [&](bool extractor, bool classifier) {
    ScdaModel m = model;
    OptimizerState s = OptimizerState::zeros_like(m);
    StepControl ctl;
    ctl.update_extractor = extractor;
    ctl.update_classifier = classifier;
    ctl.update_discriminator = false;
    ctl.alpha = config.alpha0;
    ctl.lr = step_size;
    train_step(m, s, source, target, plain, 0, ctl);
    return m;
  };
  probe.pdd_after_classifier_step = pdd_with_pairs(moved(false, true), source, target, config, pairs);
  probe.pdd_after_extractor_step = pdd_with_pairs(moved(true, false), source, target, config, pairs);
  probe.pdd_after_classifier_term_step = pdd_with_pairs(
      pdd_term_step(model, source, target, config, pairs, ParamGroup::classifier, step_size), source, target, config,
      pairs);
  probe.pdd_after_extractor_term_step = pdd_with_pairs(
      pdd_term_step(model, source, target, config, pairs, ParamGroup::extractor, step_size), source, target, config,
      pairs);
  return probe;
}

}  // namespace scda
