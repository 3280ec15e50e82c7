// sharpnoise: train variants, sweep conductance noise, measure sharpness,
// correlate and report.
//
//   sharpnoise train       --config cfg.json --method sgd+asam --rho 1.0
//   sharpnoise eval-noise  --config cfg.json --checkpoint runs/x.ckpt --sigma-c 0,0.1,0.2
//   sharpnoise sharpness   --config cfg.json --checkpoint runs/x.ckpt
//   sharpnoise correlate   --out runs
//   sharpnoise report      --out runs
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure, 1 other.

#include <cstdio>
#include <fstream>
#include <iterator>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sharpnoise/error.hpp"
#include "sharpnoise/harness.hpp"

using namespace sharpnoise;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> model;
  std::optional<std::string> method;
  std::optional<double> rho;
  std::optional<double> alpha;
  std::optional<double> clip;
  std::optional<std::string> sigma_c;
  std::optional<std::size_t> runs;
  std::optional<std::string> adabs;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> data;
  std::optional<std::string> data_root;
  std::optional<double> fraction;
  std::optional<std::string> metrics;
  std::optional<std::string> metric_rho;
  std::optional<std::size_t> m;
  std::optional<std::size_t> threads;
  std::optional<std::string> rho_selection;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "experiment config (JSON)");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--threads", o.threads, "worker threads for noise runs");
}

void add_data(CLI::App* app, Overrides& o) {
  app->add_option("--data", o.data, "mnist|cifar10|synthetic");
  app->add_option("--data-root", o.data_root, "dataset directory");
  app->add_option("--fraction", o.fraction, "training subset fraction");
  app->add_option("--batch-size", o.batch_size, "batch size");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* flag) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": not a number '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.model) c.model.arch = parse_architecture(*o.model);
  if (o.method) c.apply_method(Method::parse(*o.method));
  if (o.rho) c.sharpness.rho = *o.rho;
  if (o.alpha) {
    if (c.hooks.additive_noise) c.hooks.additive_noise->alpha = *o.alpha;
    if (c.hooks.clipping && c.hooks.clipping->kind == ClipKind::kStdAlpha) c.hooks.clipping->alpha = *o.alpha;
  }
  if (o.clip) {
    if (!c.hooks.clipping) throw ConfigError("--clip needs a method with +clip");
    c.hooks.clipping->kind = ClipKind::kFixedC;
    c.hooks.clipping->c = *o.clip;
  }
  if (o.sigma_c) c.noise.sigma_c = parse_doubles(*o.sigma_c, "--sigma-c");
  if (o.runs) c.noise.runs = *o.runs;
  if (o.adabs) {
    if (*o.adabs != "on" && *o.adabs != "off") throw ConfigError("--adabs must be on or off");
    c.adabs = *o.adabs == "on";
  }
  if (o.epochs) c.epochs = *o.epochs;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.data) c.data.source = parse_data_source(*o.data);
  if (o.data_root) c.data.root = *o.data_root;
  if (o.fraction) c.data.fraction = *o.fraction;
  if (o.metrics) {
    c.metrics.metrics.clear();
    for (const auto& name : split_list(*o.metrics)) c.metrics.metrics.push_back(parse_metric(name));
  }
  if (o.metric_rho) {
    c.metrics.rho = *o.metric_rho == "sweep" ? std::vector<double>(std::begin(kRhoSweepGrid), std::end(kRhoSweepGrid))
                                             : parse_doubles(*o.metric_rho, "--metric-rho");
  }
  if (o.m) c.metrics.m = *o.m;
  if (o.threads) c.threads = *o.threads;
  if (o.rho_selection) c.rho_selection = parse_rho_selection(*o.rho_selection);
  c.validate();
  return c;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sharpness-aware training and noisy-hardware robustness experiments"};
  app.require_subcommand(1);
  Overrides o;
  std::string checkpoint;

  auto* train = app.add_subcommand("train", "train one model variant");
  add_common(train, o);
  add_data(train, o);
  train->add_option("--model", o.model, "mlp|smallcnn|miniresnet");
  train->add_option("--method", o.method, "{sgd|adam}+{none|sam|asam}[+noise][+clip]");
  train->add_option("--rho", o.rho, "neighborhood size for sam/asam");
  train->add_option("--alpha", o.alpha, "std_alpha clipping / additive-noise alpha");
  train->add_option("--clip", o.clip, "fixed clipping range c");
  train->add_option("--epochs", o.epochs, "training epochs");

  auto* eval = app.add_subcommand("eval-noise", "accuracy under conductance variation");
  add_common(eval, o);
  add_data(eval, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--sigma-c", o.sigma_c, "comma-separated sigma_c levels (must include 0)");
  eval->add_option("--runs", o.runs, "noise realizations per level");
  eval->add_option("--adabs", o.adabs, "on|off");

  auto* sharp = app.add_subcommand("sharpness", "sharpness of a trained model");
  add_common(sharp, o);
  add_data(sharp, o);
  sharp->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sharp->add_option("--metrics", o.metrics, "comma-separated: asam_m,sam_m,keskar");
  sharp->add_option("--metric-rho", o.metric_rho, "comma-separated rho values for m-sharpness, or 'sweep'");
  sharp->add_option("--m", o.m, "minibatch size m");

  auto* corr = app.add_subcommand("correlate", "sharpness vs performance-gap correlation");
  add_common(corr, o);
  corr->add_option("--sigma-c", o.sigma_c, "sigma_c levels to correlate (default: all nonzero)");

  auto* report = app.add_subcommand("report", "consolidated summary of an output directory");
  add_common(report, o);
  report->add_option("--rho-selection", o.rho_selection, "clean_accuracy|noisy_accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      const ExperimentConfig c = resolve(o);
      const DataBundle data = load_experiment_data(c);
      const auto out = cmd_train(c, data, &std::cerr);
      std::cout << out.checkpoint.string() << '\n';
    } else if (eval->parsed()) {
      const ExperimentConfig c = resolve(o);
      const DataBundle data = load_experiment_data(c);
      const auto file = cmd_eval_noise(c, checkpoint, data);
      for (const auto& p : file.curve.points) {
        std::printf("%s sigma_c=%s mean=%.4f std=%.4f\n", file.curve.model_id.c_str(), format_number(p.sigma_c).c_str(),
                    p.mean, p.std);
      }
    } else if (sharp->parsed()) {
      const ExperimentConfig c = resolve(o);
      const DataBundle data = load_experiment_data(c);
      for (const auto& r : cmd_sharpness(c, checkpoint, data)) {
        std::printf("%s %s rho=%s value=%s\n", r.model_id.c_str(), std::string(metric_name(r.metric)).c_str(),
                    format_number(r.rho).c_str(), format_number(r.value).c_str());
      }
    } else if (corr->parsed()) {
      const ExperimentConfig c = resolve(o);
      CorrelateOptions opts;
      if (o.sigma_c) opts.sigma_levels = parse_doubles(*o.sigma_c, "--sigma-c");
      for (const auto& cell : cmd_correlate(c.out_dir, opts)) {
        std::printf("%s rho=%s sigma_c=%s r=%.4f\n", std::string(metric_name(cell.metric)).c_str(),
                    format_number(cell.rho).c_str(), format_number(cell.sigma_c).c_str(), cell.r);
      }
    } else if (report->parsed()) {
      const ExperimentConfig c = resolve(o);
      cmd_report(c.out_dir, {c.rho_selection, c.selection_sigma});
      std::ifstream txt(c.out_dir / "report.txt");
      std::cout << txt.rdbuf();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}
