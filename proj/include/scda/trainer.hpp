#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scda/model.hpp"
#include "scda/objectives.hpp"
#include "scda/pairing.hpp"
#include "scda/synthdata.hpp"

namespace scda {

struct TrainConfig {
  double temperature = 10.0;
  double alpha0 = 1.0;
  double beta = 0.1;
  /// Weight of the domain-adversarial term; > 0 adds a discriminator.
  double gamma = 0.0;
  double epsilon = kDefaultConfidenceThreshold;
  std::size_t batch_size = 32;
  std::size_t total_steps = 6000;
  double lr0 = 0.01;
  double momentum = 0.9;
  double lr_a = 10.0;
  double lr_b = 0.75;
  std::uint64_t seed = 1;
  Ablation ablation;
  ModelConfig model;
  /// Metrics are recorded every eval_interval steps and at the end.
  std::size_t eval_interval = 100;
  /// Target-eval samples scored for CAM concentration.
  std::size_t concentration_samples = 200;

  void validate() const;
  /// Model config with the discriminator switched on iff gamma > 0.
  ModelConfig effective_model() const;
};

/// lr0 * (1 + a * rho)^(-b), rho = step / total_steps.
double lr_at(std::size_t step, const TrainConfig& config);
/// alpha0 * rho.
double alpha_at(std::size_t step, const TrainConfig& config);
/// DANN's reversal ramp for the discriminator branch, 2 / (1 + e^(-10 rho)) - 1.
double adv_reversal_at(std::size_t step, const TrainConfig& config);

struct OptimizerState {
  std::vector<Tensor> velocity;  // one per ScdaModel::parameters() entry

  static OptimizerState zeros_like(const ScdaModel& model);
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, nlohmann::json diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
  const nlohmann::json& diagnostic() const { return diagnostic_; }

 private:
  nlohmann::json diagnostic_;
};

// ---- one forward graph ----------------------------------------------------

struct GraphOptions {
  double alpha = 0.0;
  /// Reversal strength of the GRL instances. Only test harnesses change it.
  double grl_lambda = 1.0;
  /// Extra factor on the discriminator-branch reversal (the DANN ramp).
  double adv_reversal = 1.0;
  /// Use these pairs instead of building them from the live predictions.
  std::optional<PairSet> fixed_pairs;
};

struct LossGraph {
  LossTerms terms;
  ad::Var total;
  PairSet pairs;
  std::vector<PseudoLabel> pseudo;
  LossBreakdown breakdown;
};

/// Builds the full objective on `tape`:
///   source CE and target probabilities (T = 1) from the plain path,
///   PDD from features -> GRL -> classifier -> softmax(./T),
///   adversarial term from features -> GRL -> discriminator.
LossGraph build_loss_graph(ad::Tape& tape, const ModelVars& vars, const LabeledBatch& source,
                           const LabeledBatch& target, const TrainConfig& config, const GraphOptions& options);

// ---- training -------------------------------------------------------------

/// Which parameter groups an update touches; the probe uses partial masks.
struct StepControl {
  bool update_extractor = true;
  bool update_classifier = true;
  bool update_discriminator = true;
  std::optional<double> alpha;
  std::optional<double> lr;
};

struct StepDiagnostics {
  double alpha = 0.0;
  double lr = 0.0;
  std::size_t m_ss = 0;
  std::size_t m_st = 0;
  std::size_t backward_passes = 0;
};

struct StepResult {
  LossBreakdown losses;
  StepDiagnostics diagnostics;
};

/// Forward, one backward on the total, then momentum SGD:
///   v <- momentum * v + g;  theta <- theta - lr * v.
/// Throws NonFiniteLoss before touching the parameters.
StepResult train_step(ScdaModel& model, OptimizerState& state, const LabeledBatch& source,
                      const LabeledBatch& target, const TrainConfig& config, std::size_t step,
                      const StepControl& control = {});

/// Forward only.
LossBreakdown evaluate_losses(const ScdaModel& model, const LabeledBatch& source, const LabeledBatch& target,
                              const TrainConfig& config, std::size_t step);

// ---- evaluation -----------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> predictions;
  Tensor logits;  // [n x C]
};

EvalResult evaluate(const ScdaModel& model, const Dataset& data);

/// Mean true-class CAM concentration on the glyph quadrant over the first
/// `max_samples` samples (degenerate maps count as 0).
double mean_concentration(const ScdaModel& model, const Dataset& data, std::size_t max_samples);

// ---- full run -------------------------------------------------------------

struct IntervalMetrics {
  std::size_t step = 0;
  LossBreakdown losses;
  double target_acc = 0.0;
  double mean_concentration = 0.0;
};

struct RunData {
  const Dataset& source_train;
  const Dataset& target_train;
  const Dataset& target_eval;
};

struct RunReport {
  TrainConfig config;
  std::vector<IntervalMetrics> intervals;
  EvalResult final_eval;
  double final_concentration = 0.0;
  ScdaModel model;
};

RunReport run(const TrainConfig& config, const RunData& data,
              const std::function<void(const IntervalMetrics&)>& on_interval = {});

nlohmann::json report_json(const RunReport& report);
std::string loss_csv(const RunReport& report);

// ---- adversarial sign probe -----------------------------------------------

struct SignProbe {
  std::size_t m_ss = 0, m_st = 0;
  double pdd_before = 0.0;
  double pdd_after_classifier_step = 0.0;
  double pdd_after_extractor_step = 0.0;
  // Same steps taken on the -alpha * PDD share of the total only. CE and MI
  // gradients are left out, so only the reversal decides the direction.
  double pdd_after_classifier_term_step = 0.0;
  double pdd_after_extractor_term_step = 0.0;

  bool has_pairs() const { return m_ss + m_st > 0; }
  bool classifier_raises() const { return pdd_after_classifier_step > pdd_before; }
  bool extractor_lowers() const { return pdd_after_extractor_step < pdd_before; }
  bool classifier_term_raises() const { return pdd_after_classifier_term_step > pdd_before; }
  bool extractor_term_lowers() const { return pdd_after_extractor_term_step < pdd_before; }
};

/// From `model`, takes one plain gradient step of size `step_size` on the
/// total loss (alpha = config.alpha0) moving only the classifier, and
/// separately only the extractor, and reports pdd_ss + pdd_st on the same
/// batch and pairs before and after. The *_term_* fields repeat this with the
/// gradient of the PDD share alone.
SignProbe adversarial_sign_probe(const ScdaModel& model, const LabeledBatch& source, const LabeledBatch& target,
                                 const TrainConfig& config, double step_size);

}  // namespace scda
