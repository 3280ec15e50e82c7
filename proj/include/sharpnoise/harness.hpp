#pragma once

// Pipeline commands shared by the CLI and the acceptance study. Artifacts of
// one model variant live next to each other in the output directory:
//   <id>.ckpt (+ .ckpt.json)   <id>.train.csv
//   <id>.robustness.csv/.json  (AdaBS off: <id>.robustness-noadabs.*)
//   <id>.sharpness.csv
// and the cross-model outputs are correlation.csv, scatter/, plots/,
// report.json and report.txt.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sharpnoise/experiment.hpp"
#include "sharpnoise/results.hpp"

namespace sharpnoise {

struct ArtifactPaths {
  std::filesystem::path checkpoint, train_log, config, robustness, robustness_summary, sharpness;
};

ArtifactPaths artifact_paths(const std::filesystem::path& dir, const std::string& model_id, bool adabs = true);

// Loads data with seeds derived from the master seed.
DataBundle load_experiment_data(const ExperimentConfig& config);

struct TrainOutcome {
  std::string model_id;
  std::filesystem::path checkpoint;
  std::vector<EpochLog> log;
};

TrainOutcome cmd_train(const ExperimentConfig& config, const DataBundle& data, std::ostream* progress = nullptr);

// Model id and method are taken from the checkpoint metadata.
CurveFile cmd_eval_noise(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                         const DataBundle& data);

std::vector<SharpnessReport> cmd_sharpness(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                                           const DataBundle& data);

struct CorrelateOptions {
  // Empty: every nonzero sigma_c shared by all curves.
  std::vector<double> sigma_levels;
  bool plots = true;
};

// Reads every <id>.robustness.csv / <id>.sharpness.csv pair in `dir`.
std::vector<CorrelationCell> cmd_correlate(const std::filesystem::path& dir, const CorrelateOptions& options = {});

struct ReportOptions {
  RhoSelection selection = RhoSelection::kCleanAccuracy;
  double selection_sigma = 0.3;
};

// Writes report.json and report.txt; throws ConfigError naming every missing
// input file.
nlohmann::json cmd_report(const std::filesystem::path& dir, const ReportOptions& options = {});

}  // namespace sharpnoise
