#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sharpnoise/data.hpp"
#include "sharpnoise/model.hpp"
#include "sharpnoise/optim.hpp"
#include "sharpnoise/sharpness.hpp"

namespace sharpnoise {

// Training method as written on the command line:
//   {sgd|adam}[+{none|sam|asam}][+noise][+clip]
struct Method {
  BaseOptimizer base = BaseOptimizer::kSgd;
  SharpnessMode mode = SharpnessMode::kNone;
  bool noise = false;
  bool clip = false;

  std::string name() const;
  static Method parse(std::string_view text);
  bool operator==(const Method&) const = default;
};

struct NoiseGrid {
  std::vector<double> sigma_c = {0.0, 0.1, 0.2, 0.3, 0.4};
  std::size_t runs = 10;
  double g_max = kDefaultGMax;
  bool operator==(const NoiseGrid&) const = default;
};

struct SharpnessGrid {
  std::vector<SharpnessMetric> metrics = {SharpnessMetric::kAsamM, SharpnessMetric::kSamM};
  std::vector<double> rho = {0.5};
  std::size_t m = 128;
  // Number of size-m training minibatches averaged over.
  std::size_t batches = 8;
  double keskar_epsilon = 1e-3;
  std::size_t keskar_steps = 10;
  bool operator==(const SharpnessGrid&) const = default;
};

// How the report picks one rho per method when several were trained.
enum class RhoSelection { kCleanAccuracy, kNoisyAccuracy };

std::string_view rho_selection_name(RhoSelection s);
RhoSelection parse_rho_selection(std::string_view name);

struct ExperimentConfig {
  ModelSpec model;
  DatasetHandle data;
  Method method;
  OptimizerConfig optimizer;
  SharpnessAwareConfig sharpness;
  RobustnessHookConfig hooks;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  bool augment = true;
  NoiseGrid noise;
  SharpnessGrid metrics;
  bool adabs = true;
  std::size_t calibration_batches = 10;
  RhoSelection rho_selection = RhoSelection::kCleanAccuracy;
  double selection_sigma = 0.3;
  std::filesystem::path out_dir = "runs";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Empty: derived from the method and rho.
  std::string model_id;

  void validate() const;
  std::string resolved_model_id() const;
  // Rewrites optimizer/sharpness/hooks from `method`, keeping explicitly
  // tuned values (rho, alpha, c) where they apply.
  void apply_method(const Method& m);
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

// Independent seed for one consumer of the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double perturbed_loss = 0.0;
  double train_accuracy = 0.0;
  double mean_epsilon_norm = 0.0;
  double max_epsilon_norm = 0.0;
  std::size_t degenerate_steps = 0;
  std::size_t clipped = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

// Full training run. Progress lines go to `progress` when non-null.
TrainResult train_model(const ExperimentConfig& config, const DataBundle& data, std::ostream* progress = nullptr);

// Batches used for noisy evaluation, AdaBS and sharpness.
std::vector<Batch> test_batches(const ExperimentConfig& config, const DataBundle& data);
std::vector<Batch> calibration_batches(const ExperimentConfig& config, const DataBundle& data);
std::vector<Batch> sharpness_batches(const ExperimentConfig& config, const DataBundle& data);

}  // namespace sharpnoise
