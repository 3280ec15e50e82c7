#include "sharpnoise/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "sharpnoise/checkpoint.hpp"
#include "sharpnoise/error.hpp"

namespace sharpnoise {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kRobustnessSuffix = ".robustness.csv";
constexpr std::string_view kSharpnessSuffix = ".sharpness.csv";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Model ids that have a file with the given suffix in dir, sorted.
std::vector<std::string> ids_with(const fs::path& dir, std::string_view suffix) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) return ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && ends_with(name, suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string tag(double v) {
  std::string s = format_number(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

void check_geometry(const ModelSpec& spec, const Dataset& data, const fs::path& checkpoint) {
  if (spec.in_channels != data.channels || spec.in_height != data.height || spec.in_width != data.width ||
      spec.num_classes != data.num_classes) {
    throw ConfigError("checkpoint/spec mismatch: " + checkpoint.string() + " holds a " +
                      std::string(architecture_name(spec.arch)) + " for [" + std::to_string(spec.in_channels) + "," +
                      std::to_string(spec.in_height) + "," + std::to_string(spec.in_width) + "] inputs, " +
                      std::to_string(spec.num_classes) + " classes; data is [" + std::to_string(data.channels) + "," +
                      std::to_string(data.height) + "," + std::to_string(data.width) + "], " +
                      std::to_string(data.num_classes) + " classes");
  }
}

}  // namespace

ArtifactPaths artifact_paths(const fs::path& dir, const std::string& model_id, bool adabs) {
  const std::string rob = adabs ? ".robustness" : ".robustness-noadabs";
  return {dir / (model_id + ".ckpt"),
          dir / (model_id + ".train.csv"),
          dir / (model_id + ".config.json"),
          dir / (model_id + rob + ".csv"),
          dir / (model_id + rob + ".json"),
          dir / (model_id + std::string(kSharpnessSuffix))};
}

DataBundle load_experiment_data(const ExperimentConfig& config) {
  DatasetHandle handle = config.data;
  handle.seed = derive_seed(config.seed, "data");
  handle.calibration_size = config.calibration_batches * config.batch_size;
  return load_data(handle);
}

TrainOutcome cmd_train(const ExperimentConfig& config, const DataBundle& data, std::ostream* progress) {
  TrainOutcome out;
  out.model_id = config.resolved_model_id();
  const auto paths = artifact_paths(config.out_dir, out.model_id);
  TrainResult result = train_model(config, data, progress);
  fs::create_directories(config.out_dir);
  const json metadata = {{"model_id", out.model_id},
                         {"method", config.method.name()},
                         {"rho", config.sharpness.rho},
                         {"epochs", config.epochs},
                         {"seed", config.seed},
                         {"final_train_loss", result.log.empty() ? 0.0 : result.log.back().loss},
                         {"final_train_accuracy", result.log.empty() ? 0.0 : result.log.back().train_accuracy}};
  save_checkpoint(paths.checkpoint, result.model, metadata);
  write_train_log(paths.train_log, result.log);
  save_config(paths.config, config);
  out.checkpoint = paths.checkpoint;
  out.log = std::move(result.log);
  return out;
}

CurveFile cmd_eval_noise(const ExperimentConfig& config, const fs::path& checkpoint, const DataBundle& data) {
  config.validate();
  Checkpoint ckpt = load_checkpoint(checkpoint);
  check_geometry(ckpt.model.spec(), data.test, checkpoint);

  CurveFile file;
  file.curve.model_id = ckpt.metadata.value("model_id", checkpoint.stem().string());
  file.method = ckpt.metadata.value("method", std::string("unknown"));
  file.adabs = config.adabs && ckpt.model.batchnorm_layers() > 0;

  const auto test = test_batches(config, data);
  const auto calib = file.adabs ? calibration_batches(config, data) : std::vector<Batch>{};
  std::vector<double> levels = config.noise.sigma_c;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  for (const double sigma : levels) {
    NoiseSpec spec{sigma, config.noise.g_max, derive_seed(config.seed, "conductance"), config.noise.runs};
    file.curve.points.push_back(evaluate_noisy(ckpt.model, spec, test, calib, {file.adabs, config.threads}));
  }
  const auto paths = artifact_paths(config.out_dir, file.curve.model_id, config.adabs);
  write_robustness(paths.robustness, paths.robustness_summary, file);
  return file;
}

std::vector<SharpnessReport> cmd_sharpness(const ExperimentConfig& config, const fs::path& checkpoint,
                                           const DataBundle& data) {
  config.validate();
  Checkpoint ckpt = load_checkpoint(checkpoint);
  check_geometry(ckpt.model.spec(), data.train, checkpoint);
  const std::string id = ckpt.metadata.value("model_id", checkpoint.stem().string());
  const auto batches = sharpness_batches(config, data);

  std::vector<SharpnessReport> reports;
  for (const auto metric : config.metrics.metrics) {
    if (metric == SharpnessMetric::kKeskar) {
      reports.push_back(measure_sharpness(ckpt.model, batches, id, metric, config.metrics.keskar_epsilon,
                                          config.metrics.keskar_steps));
      continue;
    }
    for (const double rho : config.metrics.rho) reports.push_back(measure_sharpness(ckpt.model, batches, id, metric, rho));
  }
  write_sharpness(artifact_paths(config.out_dir, id).sharpness, reports);
  return reports;
}

// --- correlate ------------------------------------------------------------------

namespace {

struct Loaded {
  std::vector<ModelRecord> records;
  std::vector<std::string> methods;
};

Loaded load_records(const fs::path& dir) {
  Loaded l;
  const auto sharp = ids_with(dir, kSharpnessSuffix);
  for (const auto& id : ids_with(dir, kRobustnessSuffix)) {
    if (!std::binary_search(sharp.begin(), sharp.end(), id)) continue;
    const auto paths = artifact_paths(dir, id);
    CurveFile curve = read_robustness(paths.robustness);
    ModelRecord r;
    r.model_id = id;
    r.method = curve.method;
    r.curve = std::move(curve.curve);
    r.curve.model_id = id;
    r.sharpness = read_sharpness(paths.sharpness);
    l.methods.push_back(r.method);
    l.records.push_back(std::move(r));
  }
  return l;
}

bool has_measure(const ModelRecord& r, SharpnessMetric metric, double rho) {
  return std::any_of(r.sharpness.begin(), r.sharpness.end(),
                     [&](const SharpnessReport& s) { return s.metric == metric && s.rho == rho; });
}

}  // namespace

std::vector<CorrelationCell> cmd_correlate(const fs::path& dir, const CorrelateOptions& options) {
  const Loaded loaded = load_records(dir);
  const auto& models = loaded.records;
  if (models.size() < 3) {
    throw ConfigError("correlate: need at least 3 model variants with both robustness and sharpness files in " +
                      dir.string() + ", found " + std::to_string(models.size()));
  }

  std::vector<double> sigmas = options.sigma_levels;
  if (sigmas.empty()) {
    for (const auto& p : models.front().curve.points) {
      if (p.sigma_c == 0.0) continue;
      if (std::all_of(models.begin(), models.end(), [&](const ModelRecord& m) { return m.curve.find(p.sigma_c); }))
        sigmas.push_back(p.sigma_c);
    }
  }
  if (sigmas.empty()) throw ConfigError("correlate: curves share no nonzero sigma_c level");

  // (metric, rho) pairs measured on every model, in the first model's order.
  std::vector<std::pair<SharpnessMetric, double>> pairs;
  for (const auto& s : models.front().sharpness) {
    const bool everywhere =
        std::all_of(models.begin(), models.end(), [&](const ModelRecord& m) { return has_measure(m, s.metric, s.rho); });
    const bool seen = std::any_of(pairs.begin(), pairs.end(),
                                  [&](const auto& p) { return p.first == s.metric && p.second == s.rho; });
    if (everywhere && !seen) pairs.emplace_back(s.metric, s.rho);
  }
  if (pairs.empty()) throw ConfigError("correlate: no sharpness measurement is shared by all models");

  std::vector<CorrelationCell> cells;
  for (const auto& [metric, rho] : pairs) {
    const SharpnessMetric m[] = {metric};
    const double r[] = {rho};
    auto part = rho_sweep_correlation(models, m, r, sigmas);
    for (auto& c : part) cells.push_back(std::move(c));
  }

  write_correlation(dir / "correlation.csv", cells);
  for (const auto& c : cells) {
    const std::string stem = std::string(metric_name(c.metric)) + "_rho" + tag(c.rho) + "_sigma" + tag(c.sigma_c);
    write_scatter(dir / "scatter" / (stem + ".csv"), c, loaded.methods);
    if (!options.plots) continue;
    std::vector<SvgSeries> series;
    for (std::size_t i = 0; i < c.model_ids.size(); ++i)
      series.push_back({c.model_ids[i], {c.sharpness[i]}, {c.gaps[i] * 100.0}, {}});
    write_svg_plot(dir / "plots" / (stem + ".svg"),
                   std::string(metric_name(c.metric)) + " rho=" + format_number(c.rho) + ", sigma_c=" +
                       format_number(c.sigma_c) + ", r=" + format_number(std::round(c.r * 1000.0) / 1000.0),
                   "sharpness", "performance gap (pt)", series, false);
  }
  if (options.plots) {
    std::vector<SvgSeries> curves;
    for (const auto& mdl : models) {
      SvgSeries s{mdl.model_id, {}, {}, {}};
      for (const auto& p : mdl.curve.points) {
        s.x.push_back(p.sigma_c);
        s.y.push_back(p.mean * 100.0);
        s.err.push_back(p.std * 100.0);
      }
      curves.push_back(std::move(s));
    }
    // r against rho, one line per (metric, sigma_c), when several rho exist
    std::vector<SvgSeries> sweep;
    for (const auto& c : cells) {
      if (c.metric == SharpnessMetric::kKeskar) continue;  // rho is a box size there
      const std::string label = std::string(metric_name(c.metric)) + " sigma_c=" + format_number(c.sigma_c);
      auto it = std::find_if(sweep.begin(), sweep.end(), [&](const SvgSeries& s) { return s.label == label; });
      if (it == sweep.end()) {
        sweep.push_back({label, {}, {}, {}});
        it = sweep.end() - 1;
      }
      it->x.push_back(std::log2(c.rho));
      it->y.push_back(c.r);
    }
    if (std::any_of(sweep.begin(), sweep.end(), [](const SvgSeries& s) { return s.x.size() > 1; })) {
      write_svg_plot(dir / "plots" / "correlation_vs_rho.svg", "pearson r of sharpness vs performance gap",
                     "log2 rho", "r", sweep, true);
    }
    write_svg_plot(dir / "plots" / "robustness.svg", "test accuracy under conductance variation", "sigma_c",
                   "accuracy (%)", curves, true);
  }
  return cells;
}

// --- report -----------------------------------------------------------------------

json cmd_report(const fs::path& dir, const ReportOptions& options) {
  std::vector<std::string> missing;
  const auto rob = ids_with(dir, kRobustnessSuffix);
  const auto sharp = ids_with(dir, kSharpnessSuffix);
  if (!fs::exists(dir / "correlation.csv")) missing.push_back((dir / "correlation.csv").string());
  if (rob.empty() && sharp.empty()) {
    missing.push_back((dir / ("<model_id>" + std::string(kRobustnessSuffix))).string());
    missing.push_back((dir / ("<model_id>" + std::string(kSharpnessSuffix))).string());
  }
  for (const auto& id : rob)
    if (!std::binary_search(sharp.begin(), sharp.end(), id)) missing.push_back(artifact_paths(dir, id).sharpness.string());
  for (const auto& id : sharp)
    if (!std::binary_search(rob.begin(), rob.end(), id)) missing.push_back(artifact_paths(dir, id).robustness.string());
  if (!missing.empty()) {
    std::string msg = "report: missing inputs:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }

  const Loaded loaded = load_records(dir);
  const auto correlation = read_correlation(dir / "correlation.csv");

  // Best variant per method under the selection rule; ties go to the first id.
  auto score = [&](const ModelRecord& r) {
    const double sigma = options.selection == RhoSelection::kCleanAccuracy ? 0.0 : options.selection_sigma;
    const CurvePoint* p = r.curve.find(sigma);
    return p ? p->mean : -1.0;
  };
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& r = loaded.records[i];
    const auto it = best.find(r.method);
    if (it == best.end() || score(r) > score(loaded.records[it->second])) best[r.method] = i;
  }

  json models = json::array();
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& r = loaded.records[i];
    json acc = json::object(), std_ = json::object(), gaps = json::object(), sh = json::array();
    for (const auto& p : r.curve.points) {
      acc[format_number(p.sigma_c)] = p.mean;
      std_[format_number(p.sigma_c)] = p.std;
      if (p.sigma_c != 0.0 && r.curve.find(0.0)) gaps[format_number(p.sigma_c)] = performance_gap(r.curve, p.sigma_c);
    }
    for (const auto& s : r.sharpness)
      sh.push_back({{"metric", metric_name(s.metric)}, {"rho", s.rho}, {"value", s.value}});
    models.push_back({{"model_id", r.model_id},
                      {"method", r.method},
                      {"selected", best.at(r.method) == i},
                      {"accuracy", acc},
                      {"accuracy_std", std_},
                      {"gap", gaps},
                      {"sharpness", sh}});
  }
  json corr = json::array();
  for (const auto& c : correlation) {
    corr.push_back({{"metric", metric_name(c.metric)}, {"rho", c.rho}, {"sigma_c", c.sigma_c}, {"models", c.models},
                    {"pearson_r", c.r}});
  }
  const json report = {{"selection", {{"rule", rho_selection_name(options.selection)}, {"sigma_c", options.selection_sigma}}},
                       {"models", models},
                       {"correlation", corr}};
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "report.json").string());
    out << report.dump(2) << '\n';
  }

  // Text table: one row per model, accuracies in percent.
  std::set<double> levels;
  for (const auto& r : loaded.records)
    for (const auto& p : r.curve.points) levels.insert(p.sigma_c);
  std::vector<std::pair<SharpnessMetric, double>> measures;
  for (const auto& r : loaded.records)
    for (const auto& s : r.sharpness)
      if (std::none_of(measures.begin(), measures.end(), [&](const auto& m) { return m.first == s.metric && m.second == s.rho; }))
        measures.emplace_back(s.metric, s.rho);

  std::string text;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-28s %-18s %3s", "model", "method", "sel");
  text += buf;
  for (const double s : levels) {
    std::snprintf(buf, sizeof buf, " %9s", ("acc@" + format_number(s)).c_str());
    text += buf;
  }
  for (const double s : levels) {
    if (s == 0.0) continue;
    std::snprintf(buf, sizeof buf, " %9s", ("gap@" + format_number(s)).c_str());
    text += buf;
  }
  for (const auto& [metric, rho] : measures) {
    std::snprintf(buf, sizeof buf, " %14s", (std::string(metric_name(metric)) + "@" + format_number(rho)).c_str());
    text += buf;
  }
  text += '\n';
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& r = loaded.records[i];
    std::snprintf(buf, sizeof buf, "%-28s %-18s %3s", r.model_id.c_str(), r.method.c_str(), best.at(r.method) == i ? "*" : "");
    text += buf;
    for (const double s : levels) {
      const CurvePoint* p = r.curve.find(s);
      if (p) std::snprintf(buf, sizeof buf, " %9.2f", p->mean * 100.0);
      else std::snprintf(buf, sizeof buf, " %9s", "-");
      text += buf;
    }
    for (const double s : levels) {
      if (s == 0.0) continue;
      if (r.curve.find(s) && r.curve.find(0.0)) std::snprintf(buf, sizeof buf, " %9.2f", performance_gap(r.curve, s) * 100.0);
      else std::snprintf(buf, sizeof buf, " %9s", "-");
      text += buf;
    }
    for (const auto& [metric, rho] : measures) {
      const auto it = std::find_if(r.sharpness.begin(), r.sharpness.end(),
                                   [&](const SharpnessReport& s) { return s.metric == metric && s.rho == rho; });
      if (it != r.sharpness.end()) std::snprintf(buf, sizeof buf, " %14.6g", it->value);
      else std::snprintf(buf, sizeof buf, " %14s", "-");
      text += buf;
    }
    text += '\n';
  }
  text += "\npearson r (sharpness vs gap)\n";
  for (const auto& c : correlation) {
    std::snprintf(buf, sizeof buf, "  %-8s rho=%-8s sigma_c=%-5s r=% .4f  (n=%zu)\n", std::string(metric_name(c.metric)).c_str(),
                  format_number(c.rho).c_str(), format_number(c.sigma_c).c_str(), c.r, c.models);
    text += buf;
  }
  {
    std::ofstream out(dir / "report.txt", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "report.txt").string());
    out << text;
  }
  return report;
}

}  // namespace sharpnoise
