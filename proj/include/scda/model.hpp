#pragma once

// The adaptation network F = C o G.
//
// G is a stack of per-location stages (1x1 convolutions, optionally one 3x3
// mixing stage) with ReLU after every stage, so it keeps the input's spatial
// grid. C is a bias-free linear map applied after global average pooling,
// which makes class activation maps exact:
//   z_c = sum_h w[c,h] * mean_uv a_h(u,v) = mean_uv sum_h w[c,h] a_h(u,v).
// D is an optional two-layer domain discriminator used when the domain
// adversarial term is enabled.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scda/autodiff.hpp"
#include "scda/tensor.hpp"

namespace scda {

struct ExtractorConfig {
  std::size_t in_channels = 1;
  std::vector<std::size_t> hidden{16};
  std::size_t features = 8;
  /// Inserts a 3x3 stage (hidden -> hidden) after the first stage.
  bool local_mixing = false;
};

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t classes = 4;
  bool discriminator = false;
  std::size_t discriminator_hidden = 16;
};

enum class StageKind { pointwise, local3x3 };

struct Stage {
  StageKind kind = StageKind::pointwise;
  Tensor weight;  // [out x in] or [out x 9*in]
  Tensor bias;    // [out]
};

struct ExtractorParams {
  std::vector<Stage> stages;
  std::size_t in_channels() const;
  std::size_t features() const;
};

struct ClassifierParams {
  Tensor weight;  // [classes x features], no bias
};

struct AffineParams {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

struct DiscriminatorParams {
  AffineParams hidden;
  AffineParams output;  // single logit
};

enum class ParamGroup { extractor, classifier, discriminator };

struct ScdaModel {
  ExtractorParams extractor;
  ClassifierParams classifier;
  std::optional<DiscriminatorParams> discriminator;

  std::size_t classes() const { return classifier.weight.dim(0); }
  std::size_t features() const { return classifier.weight.dim(1); }

  /// Every parameter tensor with its checkpoint name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  friend bool operator==(const ScdaModel&, const ScdaModel&);
};

ParamGroup group_of(const std::string& parameter_name);

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
ScdaModel init_params(std::uint64_t seed, const ModelConfig& config);

// ---- graph construction ---------------------------------------------------

struct StageVars {
  StageKind kind;
  ad::Var weight;
  ad::Var bias;
};

struct DiscriminatorVars {
  ad::Var hidden_weight, hidden_bias, output_weight, output_bias;
};

struct ModelVars {
  std::vector<StageVars> extractor;
  ad::Var classifier;
  std::optional<DiscriminatorVars> discriminator;
  /// Same order as ScdaModel::parameters().
  std::vector<ad::Var> all;
};

/// Registers every parameter of `model` as a differentiable leaf.
ModelVars bind(ad::Tape& tape, const ScdaModel& model);

/// images [n x in_ch x H x W] -> activations [n x features x H x W]
ad::Var extract(std::span<const StageVars> stages, ad::Var images);
/// activations [n x features x H x W] -> logits [n x classes]
ad::Var classify(ad::Var weight, ad::Var activations);
/// pooled features [n x features] -> logits [n x classes]
ad::Var logits_from_features(ad::Var weight, ad::Var features);
/// pooled features [n x features] -> P(source) [n x 1]
ad::Var discriminate(const DiscriminatorVars& disc, ad::Var features);

// Value-level wrappers (no gradients recorded).
Tensor extract(const ExtractorParams& params, const Tensor& images);
Tensor classify(const ClassifierParams& params, const Tensor& activations);
Tensor discriminate(const DiscriminatorParams& params, const Tensor& features);

// ---- checkpoints ----------------------------------------------------------
// {"<name>": {"shape": [...], "values": [...]}, ...}; doubles are written in
// shortest round-trip form so a load restores the exact bits.

nlohmann::json checkpoint_json(const ScdaModel& model);
ScdaModel model_from_checkpoint(const nlohmann::json& j);
void save_checkpoint(const ScdaModel& model, const std::filesystem::path& path);
ScdaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace scda
