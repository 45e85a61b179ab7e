#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "scda/synthdata.hpp"
#include "scda/trainer.hpp"

namespace scda {

/// Contents of a --config file:
///   {"synth": {...SynthConfig...}, "train": {...TrainConfig...}}
/// with "train.model" holding the ModelConfig. Every section and key is
/// optional; unknown keys raise ConfigError.
struct ExperimentConfig {
  SynthConfig synth;
  TrainConfig train;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const SynthConfig& config);
nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);

/// Overlay `j` onto `base`.
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace scda
