// scda: command-line front end.
//
//   scda generate  --out data/
//   scda train     --data data/ --out run/ [--ablate no_mi] [--gamma 1] [--seeds 1,2,3 --jobs 3]
//   scda eval      --checkpoint run/checkpoint.json --data data/target_eval.scd --out eval/
//   scda cam       --checkpoint run/checkpoint.json --data data/target_eval.scd --samples 0,1 --out cams/
//   scda gradcheck [--out dir]
//
// Exit status: 0 on success, 1 when gradcheck finds a mismatch, 2 on errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scda/cam.hpp"
#include "scda/config.hpp"
#include "scda/gradcheck.hpp"
#include "scda/kernels.hpp"
#include "scda/model.hpp"
#include "scda/synthdata.hpp"
#include "scda/trainer.hpp"

namespace fs = std::filesystem;
using namespace scda;

namespace {

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed (overrides the config)");
}

ExperimentConfig load(const Common& c) { return c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

Dataset read_existing(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing dataset file: " + path.string());
  return read_dataset(path);
}

std::string dataset_file(Split split, Domain domain) {
  return std::string(domain == Domain::source ? "source" : "target") + (split == Split::train ? "_train" : "_eval") +
         ".scd";
}

// ---- generate ----------------------------------------------------------------

int cmd_generate(const Common& c) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.synth.seed = *c.seed;
  cfg.synth.validate();
  fs::create_directories(c.out);
  for (Split split : {Split::train, Split::eval}) {
    for (Domain domain : {Domain::source, Domain::target}) {
      const fs::path path = fs::path(c.out) / dataset_file(split, domain);
      write_dataset(generate(cfg.synth, split, domain), path);
      std::cout << "wrote " << path.string() << "\n";
    }
  }
  write_json(fs::path(c.out) / "synth.json", to_json(cfg.synth));
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string ablate;
  std::optional<double> gamma;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  bool quiet = false;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  ExperimentConfig cfg = load(c);
  TrainConfig base = cfg.train;
  if (c.seed) base.seed = *c.seed;
  if (!a.ablate.empty()) base.ablation = Ablation::parse(a.ablate);
  if (a.gamma) base.gamma = *a.gamma;

  const fs::path data_dir = a.data.empty() ? fs::path(c.out) : fs::path(a.data);
  const Dataset source_train = read_existing(data_dir / dataset_file(Split::train, Domain::source));
  const Dataset target_train = read_existing(data_dir / dataset_file(Split::train, Domain::target));
  const Dataset target_eval = read_existing(data_dir / dataset_file(Split::eval, Domain::target));
  base.model.classes = source_train.classes;
  base.validate();

  const std::vector<std::uint64_t> seeds = a.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : a.seeds;
  const bool sweep = !a.seeds.empty();
  auto one = [&](std::uint64_t seed) {
    // concurrent seeds already fill the cores; keep each run single-threaded
    if (a.jobs > 1) kernels::set_num_threads(1);
    TrainConfig tc = base;
    tc.seed = seed;
    const fs::path out = sweep ? fs::path(c.out) / ("seed_" + std::to_string(seed)) : fs::path(c.out);
    fs::create_directories(out);
    auto progress = [&](const IntervalMetrics& m) {
      if (a.quiet) return;
      std::fprintf(stderr, "[seed %llu] step %zu  total=%.5f  ce=%.5f  target_acc=%.4f\n",
                   static_cast<unsigned long long>(seed), m.step, m.losses.total, m.losses.ce, m.target_acc);
    };
    try {
      const RunReport report = run(tc, {source_train, target_train, target_eval}, progress);
      write_json(out / "report.json", report_json(report));
      write_text(out / "loss.csv", loss_csv(report));
      save_checkpoint(report.model, out / "checkpoint.json");
      return report.final_eval.accuracy;
    } catch (const NonFiniteLoss& e) {
      write_json(out / "diagnostic.json", e.diagnostic());
      throw std::runtime_error(std::string(e.what()) + " (diagnostic written to " + (out / "diagnostic.json").string() +
                               ")");
    }
  };

  std::vector<double> accuracies(seeds.size());
  const std::size_t jobs = std::max<std::size_t>(1, a.jobs);
  for (std::size_t start = 0; start < seeds.size(); start += jobs) {
    std::vector<std::future<double>> running;
    for (std::size_t i = start; i < std::min(seeds.size(), start + jobs); ++i) {
      running.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, one, seeds[i]));
    }
    for (std::size_t i = 0; i < running.size(); ++i) accuracies[start + i] = running[i].get();
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    std::printf("seed %llu target_acc %.6f\n", static_cast<unsigned long long>(seeds[i]), accuracies[i]);
  }
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const ScdaModel model = load_checkpoint(a.checkpoint);
  const Dataset data = read_existing(a.data);
  const EvalResult r = evaluate(model, data);
  fs::create_directories(c.out);

  std::vector<std::size_t> counts;
  for (const auto& row : r.confusion) {
    std::size_t n = 0;
    for (std::size_t v : row) n += v;
    counts.push_back(n);
  }
  write_json(fs::path(c.out) / "eval.json",
             {{"accuracy", r.accuracy}, {"samples", data.size()}, {"class_counts", counts}, {"confusion", r.confusion}});

  std::string csv = "true\\pred";
  for (std::size_t j = 0; j < r.confusion.size(); ++j) csv += "," + std::to_string(j);
  csv += "\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    csv += std::to_string(i);
    for (std::size_t v : r.confusion[i]) csv += "," + std::to_string(v);
    csv += "\n";
  }
  write_text(fs::path(c.out) / "confusion.csv", csv);
  std::printf("accuracy %.6f (%zu samples)\n", r.accuracy, data.size());
  return 0;
}

// ---- cam ---------------------------------------------------------------------

struct CamArgs {
  std::string checkpoint;
  std::string data;
  std::vector<std::size_t> samples{0};
  std::size_t upscale = 4;
};

int cmd_cam(const Common& c, const CamArgs& a) {
  const ScdaModel model = load_checkpoint(a.checkpoint);
  const Dataset data = read_existing(a.data);
  if (a.upscale == 0) throw std::invalid_argument("--upscale must be positive");
  fs::create_directories(c.out);

  const std::size_t hw = data.pixels_per_image();
  std::string csv = "sample,label,class,concentration,degenerate,cam_logit,eval_logit\n";
  char buf[256];
  for (std::size_t s : a.samples) {
    if (s >= data.size()) throw std::out_of_range("sample " + std::to_string(s) + " outside dataset");
    const std::size_t idx[] = {s};
    const LabeledBatch b = make_batch(data, idx);
    const Tensor act = extract(model.extractor, b.images);
    const Tensor one({model.features(), data.height, data.width}, act.values());
    const CamResult cam = compute_cam(one, model.classifier.weight);
    const Tensor eval_logits = classify(model.classifier, act);
    const auto mask = std::span<const std::uint8_t>(data.masks).subspan(s * hw, hw);
    for (std::size_t k = 0; k < cam.classes(); ++k) {
      const Tensor map = upsample_nearest(cam_slice(cam, k), data.height * a.upscale, data.width * a.upscale);
      write_pgm(map, fs::path(c.out) / ("cam_" + std::to_string(s) + "_" + std::to_string(k) + ".pgm"));
      const ConcentrationScore score = concentration(cam, k, mask);
      const int label = data.labels[s] == kAbsentLabel ? -1 : data.labels[s];
      std::snprintf(buf, sizeof buf, "%zu,%d,%zu,%.17g,%d,%.17g,%.17g\n", s, label, k, score.ratio,
                    score.degenerate ? 1 : 0, cam.logits[k], eval_logits.at(0, k));
      csv += buf;
    }
  }
  write_text(fs::path(c.out) / "concentration.csv", csv);
  std::printf("wrote %zu heatmaps to %s\n", a.samples.size() * model.classes(), c.out.c_str());
  return 0;
}

// ---- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const Common& c, bool inject_bug, bool out_given) {
  GradcheckOptions opt;
  if (c.seed) opt.seed = *c.seed;
  opt.inject_grl_bug = inject_bug;
  const GradcheckReport report = run_gradcheck(opt);
  std::cout << gradcheck_text(report);
  if (out_given) {
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "gradcheck.json", gradcheck_json(report));
  }
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pair-wise prediction-distribution alignment for domain adaptation"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, cam_c, grad_c;
  TrainArgs train_a;
  EvalArgs eval_a;
  CamArgs cam_a;
  bool inject_bug = false;

  auto* gen = app.add_subcommand("generate", "Write the synthetic source/target train/eval datasets");
  add_common(gen, gen_c);

  auto* train = app.add_subcommand("train", "Train and write report.json, loss.csv, checkpoint.json");
  add_common(train, train_c);
  train->add_option("--data", train_a.data, "Dataset directory (default: --out)");
  train->add_option("--ablate", train_a.ablate, "Comma list of no_mi,no_pdd_ss,no_pdd_st,no_pdd");
  train->add_option("--gamma", train_a.gamma, "Weight of the domain-adversarial term");
  train->add_option("--seeds", train_a.seeds, "Train one run per seed into <out>/seed_<s>/")->delimiter(',');
  train->add_option("--jobs", train_a.jobs, "Seeds trained concurrently")->check(CLI::PositiveNumber);
  train->add_flag("--quiet", train_a.quiet, "No progress lines");

  auto* ev = app.add_subcommand("eval", "Accuracy and confusion matrix of a checkpoint");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_a.checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_a.data, "Labeled dataset file")->required();

  auto* cam = app.add_subcommand("cam", "Class activation heatmaps and concentration scores");
  add_common(cam, cam_c);
  cam->add_option("--checkpoint", cam_a.checkpoint)->required()->check(CLI::ExistingFile);
  cam->add_option("--data", cam_a.data, "Dataset file")->required();
  cam->add_option("--samples", cam_a.samples, "Sample indices")->delimiter(',');
  cam->add_option("--upscale", cam_a.upscale, "Integer upsampling factor")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss term");
  add_common(grad, grad_c);
  grad->add_flag("--inject-grl-bug", inject_bug)->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(gen_c);
    if (*train) return cmd_train(train_c, train_a);
    if (*ev) return cmd_eval(eval_c, eval_a);
    if (*cam) return cmd_cam(cam_c, cam_a);
    if (*grad) return cmd_gradcheck(grad_c, inject_bug, grad->count("--out") > 0);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
