#include "scda/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "scda/rng.hpp"

namespace scda {

std::size_t ExtractorParams::in_channels() const {
  const Stage& s = stages.front();
  return s.kind == StageKind::local3x3 ? s.weight.dim(1) / 9 : s.weight.dim(1);
}

std::size_t ExtractorParams::features() const { return stages.back().weight.dim(0); }

namespace {
const char* kind_name(StageKind k) { return k == StageKind::pointwise ? "pointwise" : "local3x3"; }

std::string stage_name(std::size_t i, StageKind k, const char* field) {
  return "extractor." + std::to_string(i) + "." + kind_name(k) + "." + field;
}
}  // namespace

std::vector<std::pair<std::string, Tensor*>> ScdaModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < extractor.stages.size(); ++i) {
    Stage& s = extractor.stages[i];
    out.emplace_back(stage_name(i, s.kind, "weight"), &s.weight);
    out.emplace_back(stage_name(i, s.kind, "bias"), &s.bias);
  }
  out.emplace_back("classifier.weight", &classifier.weight);
  if (discriminator) {
    out.emplace_back("discriminator.hidden.weight", &discriminator->hidden.weight);
    out.emplace_back("discriminator.hidden.bias", &discriminator->hidden.bias);
    out.emplace_back("discriminator.output.weight", &discriminator->output.weight);
    out.emplace_back("discriminator.output.bias", &discriminator->output.bias);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ScdaModel::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ScdaModel*>(this)->parameters()) out.emplace_back(name, t);
  return out;
}

bool operator==(const ScdaModel& a, const ScdaModel& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first != pb[i].first || !(*pa[i].second == *pb[i].second)) return false;
  }
  return true;
}

ParamGroup group_of(const std::string& name) {
  if (name.rfind("extractor.", 0) == 0) return ParamGroup::extractor;
  if (name.rfind("classifier.", 0) == 0) return ParamGroup::classifier;
  if (name.rfind("discriminator.", 0) == 0) return ParamGroup::discriminator;
  throw std::invalid_argument("unknown parameter name '" + name + "'");
}

namespace {
Tensor glorot(SplitMix64& rng, std::size_t out, std::size_t in, std::size_t fan_in, std::size_t fan_out) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({out, in});
  for (auto& v : w.data()) v = rng.uniform(-s, s);
  return w;
}
}  // namespace

ScdaModel init_params(std::uint64_t seed, const ModelConfig& config) {
  const auto& ec = config.extractor;
  if (ec.in_channels == 0 || ec.features == 0 || config.classes == 0) {
    throw std::invalid_argument("init_params: channel counts and classes must be positive");
  }
  if (ec.local_mixing && ec.hidden.empty()) {
    throw std::invalid_argument("init_params: local mixing needs at least one hidden stage");
  }
  SplitMix64 rng(derive_seed(seed, 0x6d6f64656cULL));
  ScdaModel model;

  std::vector<std::pair<StageKind, std::pair<std::size_t, std::size_t>>> plan;
  std::size_t width = ec.in_channels;
  for (std::size_t i = 0; i < ec.hidden.size(); ++i) {
    plan.push_back({StageKind::pointwise, {width, ec.hidden[i]}});
    width = ec.hidden[i];
    if (i == 0 && ec.local_mixing) plan.push_back({StageKind::local3x3, {width, width}});
  }
  plan.push_back({StageKind::pointwise, {width, ec.features}});

  for (const auto& [kind, io] : plan) {
    const auto [in, out] = io;
    Stage s;
    s.kind = kind;
    if (kind == StageKind::pointwise) {
      s.weight = glorot(rng, out, in, in, out);
    } else {
      s.weight = glorot(rng, out, 9 * in, 9 * in, 9 * out);
    }
    s.bias = Tensor(Shape{out});
    model.extractor.stages.push_back(std::move(s));
  }
  model.classifier.weight = glorot(rng, config.classes, ec.features, ec.features, config.classes);
  if (config.discriminator) {
    DiscriminatorParams d;
    const std::size_t h = config.discriminator_hidden;
    d.hidden.weight = glorot(rng, h, ec.features, ec.features, h);
    d.hidden.bias = Tensor(Shape{h});
    d.output.weight = glorot(rng, 1, h, h, 1);
    d.output.bias = Tensor(Shape{1});
    model.discriminator = std::move(d);
  }
  return model;
}

// ---- graph construction ---------------------------------------------------

ModelVars bind(ad::Tape& tape, const ScdaModel& model) {
  ModelVars mv;
  for (const Stage& s : model.extractor.stages) {
    StageVars sv{s.kind, tape.leaf(s.weight), tape.leaf(s.bias)};
    mv.all.push_back(sv.weight);
    mv.all.push_back(sv.bias);
    mv.extractor.push_back(sv);
  }
  mv.classifier = tape.leaf(model.classifier.weight);
  mv.all.push_back(mv.classifier);
  if (model.discriminator) {
    const auto& d = *model.discriminator;
    DiscriminatorVars dv{tape.leaf(d.hidden.weight), tape.leaf(d.hidden.bias),
                         tape.leaf(d.output.weight), tape.leaf(d.output.bias)};
    mv.all.insert(mv.all.end(), {dv.hidden_weight, dv.hidden_bias, dv.output_weight, dv.output_bias});
    mv.discriminator = dv;
  }
  return mv;
}

ad::Var extract(std::span<const StageVars> stages, ad::Var images) {
  if (images.shape().size() != 4) {
    throw ShapeError("extract: images must be [n x c x H x W], got " + shape_str(images.shape()));
  }
  ad::Var x = images;
  for (const StageVars& s : stages) {
    if (s.kind == StageKind::local3x3) x = ad::unfold3x3(x);
    x = ad::relu(ad::conv1x1(x, s.weight, s.bias));
  }
  return x;
}

ad::Var logits_from_features(ad::Var weight, ad::Var features) {
  return ad::matmul_nt(features, weight);
}

ad::Var classify(ad::Var weight, ad::Var activations) {
  if (activations.shape().size() != 4 || activations.shape()[1] != weight.shape()[1]) {
    throw ShapeError("classify: activations " + shape_str(activations.shape()) +
                     " incompatible with classifier " + shape_str(weight.shape()));
  }
  return logits_from_features(weight, ad::global_average_pool(activations));
}

ad::Var discriminate(const DiscriminatorVars& d, ad::Var features) {
  ad::Var h = ad::relu(ad::add_bias(ad::matmul_nt(features, d.hidden_weight), d.hidden_bias));
  return ad::sigmoid(ad::add_bias(ad::matmul_nt(h, d.output_weight), d.output_bias));
}

Tensor extract(const ExtractorParams& params, const Tensor& images) {
  ad::Tape tape;
  std::vector<StageVars> sv;
  for (const Stage& s : params.stages) {
    sv.push_back({s.kind, tape.constant(s.weight), tape.constant(s.bias)});
  }
  return extract(sv, tape.constant(images)).value();
}

Tensor classify(const ClassifierParams& params, const Tensor& activations) {
  ad::Tape tape;
  return classify(tape.constant(params.weight), tape.constant(activations)).value();
}

Tensor discriminate(const DiscriminatorParams& params, const Tensor& features) {
  ad::Tape tape;
  DiscriminatorVars dv{tape.constant(params.hidden.weight), tape.constant(params.hidden.bias),
                       tape.constant(params.output.weight), tape.constant(params.output.bias)};
  return discriminate(dv, tape.constant(features)).value();
}

// ---- checkpoints ----------------------------------------------------------

nlohmann::json checkpoint_json(const ScdaModel& model) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : model.parameters()) {
    j[name] = {{"shape", t->shape()}, {"values", t->values()}};
  }
  return j;
}

namespace {
Tensor tensor_from(const nlohmann::json& entry, const std::string& name) {
  if (!entry.contains("shape") || !entry.contains("values")) {
    throw std::runtime_error("checkpoint entry '" + name + "' needs shape and values");
  }
  return Tensor(entry.at("shape").get<Shape>(), entry.at("values").get<std::vector<double>>());
}
}  // namespace

ScdaModel model_from_checkpoint(const nlohmann::json& j) {
  if (!j.is_object()) throw std::runtime_error("checkpoint: expected a JSON object");
  ScdaModel model;
  std::map<std::size_t, Stage> stages;
  std::map<std::string, Tensor> disc;
  bool have_classifier = false;
  for (const auto& [name, entry] : j.items()) {
    Tensor t = tensor_from(entry, name);
    if (name == "classifier.weight") {
      model.classifier.weight = std::move(t);
      have_classifier = true;
    } else if (name.rfind("discriminator.", 0) == 0) {
      disc[name] = std::move(t);
    } else if (name.rfind("extractor.", 0) == 0) {
      // extractor.<index>.<kind>.<field>
      const auto p1 = name.find('.', 10);
      const auto p2 = name.find('.', p1 + 1);
      if (p1 == std::string::npos || p2 == std::string::npos) {
        throw std::runtime_error("checkpoint: malformed name '" + name + "'");
      }
      const std::size_t idx = std::stoul(name.substr(10, p1 - 10));
      const std::string kind = name.substr(p1 + 1, p2 - p1 - 1);
      const std::string field = name.substr(p2 + 1);
      Stage& s = stages[idx];
      if (kind == "pointwise") s.kind = StageKind::pointwise;
      else if (kind == "local3x3") s.kind = StageKind::local3x3;
      else throw std::runtime_error("checkpoint: unknown stage kind in '" + name + "'");
      if (field == "weight") s.weight = std::move(t);
      else if (field == "bias") s.bias = std::move(t);
      else throw std::runtime_error("checkpoint: unknown field in '" + name + "'");
    } else {
      throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    }
  }
  if (!have_classifier || stages.empty()) {
    throw std::runtime_error("checkpoint: missing extractor or classifier parameters");
  }
  std::size_t expect = 0;
  for (auto& [idx, s] : stages) {
    if (idx != expect++) throw std::runtime_error("checkpoint: extractor stage indices not contiguous");
    model.extractor.stages.push_back(std::move(s));
  }
  if (!disc.empty()) {
    DiscriminatorParams d;
    try {
      d.hidden.weight = disc.at("discriminator.hidden.weight");
      d.hidden.bias = disc.at("discriminator.hidden.bias");
      d.output.weight = disc.at("discriminator.output.weight");
      d.output.bias = disc.at("discriminator.output.bias");
    } catch (const std::out_of_range&) {
      throw std::runtime_error("checkpoint: incomplete discriminator");
    }
    model.discriminator = std::move(d);
  }
  if (model.extractor.features() != model.features()) {
    throw ShapeError("checkpoint: extractor emits " + std::to_string(model.extractor.features()) +
                     " features but classifier is " + shape_str(model.classifier.weight.shape()));
  }
  return model;
}

void save_checkpoint(const ScdaModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_json(model).dump() << '\n';
}

ScdaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return model_from_checkpoint(nlohmann::json::parse(in));
}

}  // namespace scda
