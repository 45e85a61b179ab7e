#include "scda/config.hpp"

#include <fstream>
#include <set>
#include <string>
#include <type_traits>

namespace scda {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.at(key).is_number_unsigned()) {
      throw ConfigError("config key '" + section + "." + key + "' must be a nonnegative integer");
    }
  }
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const SynthConfig& c) {
  return {{"classes", c.classes},
          {"height", c.height},
          {"width", c.width},
          {"glyph_size", c.glyph_size},
          {"glyph_value", c.glyph_value},
          {"stripe_base", c.stripe_base},
          {"stripe_step", c.stripe_step},
          {"confound", c.confound},
          {"target_stripe_level", c.target_stripe_level},
          {"noise", c.noise},
          {"train_per_domain", c.train_per_domain},
          {"eval_per_domain", c.eval_per_domain},
          {"seed", c.seed}};
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"in_channels", c.extractor.in_channels},
          {"hidden", c.extractor.hidden},
          {"features", c.extractor.features},
          {"local_mixing", c.extractor.local_mixing},
          {"classes", c.classes},
          {"discriminator_hidden", c.discriminator_hidden}};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"temperature", c.temperature},
          {"alpha0", c.alpha0},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"epsilon", c.epsilon},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"lr0", c.lr0},
          {"momentum", c.momentum},
          {"lr_a", c.lr_a},
          {"lr_b", c.lr_b},
          {"seed", c.seed},
          {"ablation", c.ablation.str()},
          {"eval_interval", c.eval_interval},
          {"concentration_samples", c.concentration_samples},
          {"model", to_json(c.model)}};
}

nlohmann::json to_json(const ExperimentConfig& c) { return {{"synth", to_json(c.synth)}, {"train", to_json(c.train)}}; }

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c) {
  const std::string s = "synth";
  reject_unknown(j, {"classes", "height", "width", "glyph_size", "glyph_value", "stripe_base", "stripe_step",
                     "confound", "target_stripe_level", "noise", "train_per_domain", "eval_per_domain", "seed"},
                 s);
  read(j, "classes", c.classes, s);
  read(j, "height", c.height, s);
  read(j, "width", c.width, s);
  read(j, "glyph_size", c.glyph_size, s);
  read(j, "glyph_value", c.glyph_value, s);
  read(j, "stripe_base", c.stripe_base, s);
  read(j, "stripe_step", c.stripe_step, s);
  read(j, "confound", c.confound, s);
  read(j, "target_stripe_level", c.target_stripe_level, s);
  read(j, "noise", c.noise, s);
  read(j, "train_per_domain", c.train_per_domain, s);
  read(j, "eval_per_domain", c.eval_per_domain, s);
  read(j, "seed", c.seed, s);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  const std::string s = "train.model";
  reject_unknown(j, {"in_channels", "hidden", "features", "local_mixing", "classes", "discriminator_hidden"}, s);
  read(j, "in_channels", c.extractor.in_channels, s);
  read(j, "hidden", c.extractor.hidden, s);
  read(j, "features", c.extractor.features, s);
  read(j, "local_mixing", c.extractor.local_mixing, s);
  read(j, "classes", c.classes, s);
  read(j, "discriminator_hidden", c.discriminator_hidden, s);
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  const std::string s = "train";
  reject_unknown(j, {"temperature", "alpha0", "beta", "gamma", "epsilon", "batch_size", "total_steps", "lr0",
                     "momentum", "lr_a", "lr_b", "seed", "ablation", "eval_interval", "concentration_samples",
                     "model"},
                 s);
  read(j, "temperature", c.temperature, s);
  read(j, "alpha0", c.alpha0, s);
  read(j, "beta", c.beta, s);
  read(j, "gamma", c.gamma, s);
  read(j, "epsilon", c.epsilon, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "total_steps", c.total_steps, s);
  read(j, "lr0", c.lr0, s);
  read(j, "momentum", c.momentum, s);
  read(j, "lr_a", c.lr_a, s);
  read(j, "lr_b", c.lr_b, s);
  read(j, "seed", c.seed, s);
  read(j, "eval_interval", c.eval_interval, s);
  read(j, "concentration_samples", c.concentration_samples, s);
  if (j.contains("ablation")) {
    std::string flags;
    read(j, "ablation", flags, s);
    try {
      c.ablation = Ablation::parse(flags);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"synth", "train"}, "<root>");
  ExperimentConfig c;
  if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"), c.synth);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  const bool explicit_classes =
      j.contains("train") && j["train"].contains("model") && j["train"]["model"].contains("classes");
  if (explicit_classes && c.train.model.classes != c.synth.classes) {
    throw ConfigError("train.model.classes (" + std::to_string(c.train.model.classes) + ") differs from synth.classes (" +
                      std::to_string(c.synth.classes) + ")");
  }
  c.train.model.classes = c.synth.classes;
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace scda
