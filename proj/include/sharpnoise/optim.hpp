#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sharpnoise/batch.hpp"
#include "sharpnoise/model.hpp"
#include "sharpnoise/params.hpp"
#include "sharpnoise/rng.hpp"

namespace sharpnoise {

enum class BaseOptimizer { kSgd, kAdam };
enum class SharpnessMode { kNone, kSam, kAsam };

std::string_view base_optimizer_name(BaseOptimizer base);
BaseOptimizer parse_base_optimizer(std::string_view name);
std::string_view sharpness_mode_name(SharpnessMode mode);
SharpnessMode parse_sharpness_mode(std::string_view name);

struct OptimizerConfig {
  BaseOptimizer base = BaseOptimizer::kSgd;
  double lr = 0.05;
  // Multiplied into lr at every milestone epoch, and every decay_every epochs
  // when decay_every > 0.
  double lr_decay = 0.1;
  std::size_t decay_every = 0;
  std::vector<std::size_t> milestones = {15, 25};
  double momentum = 0.9;
  // L2 penalty on conv/linear weights only.
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  double lr_at_epoch(std::size_t epoch) const;

  // Library defaults of Adam (lr 1e-3, betas 0.9/0.999, eps 1e-8, no decay).
  static OptimizerConfig adam_defaults();

  bool operator==(const OptimizerConfig&) const = default;
};

struct SharpnessAwareConfig {
  SharpnessMode mode = SharpnessMode::kNone;
  double rho = 0.0;

  void validate() const;
  bool operator==(const SharpnessAwareConfig&) const = default;
};

// Neighborhood-size grids searched for each mode.
inline constexpr double kSamRhoGrid[] = {0.05, 0.1, 0.2, 0.5};
inline constexpr double kAsamRhoGrid[] = {0.5, 1.0, 1.5, 2.0};
inline constexpr double kDefaultSamRho = 0.05;
inline constexpr double kDefaultAsamRho = 0.5;

// Device constants of the additive-noise baseline.
inline constexpr double kDefaultSigmaG = 0.94;
inline constexpr double kDefaultGMax = 25.0;
inline constexpr double kDefaultClipAlpha = 2.0;
inline constexpr double kDefaultClipC = 0.2;
inline constexpr double kAlphaGrid[] = {1.5, 2.0, 2.5};
inline constexpr double kClipGrid[] = {0.05, 0.10, 0.15, 0.20};

struct AdditiveNoiseConfig {
  double alpha = kDefaultClipAlpha;
  double sigma_g = kDefaultSigmaG;
  double g_max = kDefaultGMax;
  bool operator==(const AdditiveNoiseConfig&) const = default;
};

enum class ClipKind { kStdAlpha, kFixedC };

struct ClipConfig {
  ClipKind kind = ClipKind::kFixedC;
  double alpha = kDefaultClipAlpha;  // kStdAlpha
  double c = kDefaultClipC;          // kFixedC
  bool operator==(const ClipConfig&) const = default;
};

struct RobustnessHookConfig {
  std::optional<AdditiveNoiseConfig> additive_noise;
  // When absent and additive noise is on, std_alpha clipping with the noise
  // alpha is used.
  std::optional<ClipConfig> clipping;

  void validate() const;
  std::optional<ClipConfig> effective_clipping() const;
  bool operator==(const RobustnessHookConfig&) const = default;
};

// --- base optimizers -------------------------------------------------------

struct OptimizerState {
  std::vector<std::vector<float>> first;   // momentum buffer or Adam m
  std::vector<std::vector<float>> second;  // Adam v
  std::uint64_t steps = 0;
};

// In-place update of every trainable entry from its populated grad.
void base_step(ParamSet& params, const OptimizerConfig& config, OptimizerState& state, double lr);

// --- perturbations ----------------------------------------------------------

struct GradBlock {
  std::span<const float> weights;
  std::span<const float> grads;
  // Elementwise |w| normalization when true, identity otherwise.
  bool adaptive = false;
};

struct Epsilon {
  std::vector<std::vector<double>> blocks;
  // Norm in the metric of the estimate: |g| for SAM, |T_w g| for ASAM.
  double scaled_grad_norm = 0.0;
  // Set when that norm is zero; every block is then zero.
  bool degenerate = false;
};

// rho * g / |g|, over the concatenation of all blocks.
Epsilon sam_epsilon(std::span<const GradBlock> blocks, double rho);
// rho * T^2 g / |T g| with T = |w| on adaptive blocks and 1 elsewhere.
Epsilon asam_epsilon(std::span<const GradBlock> blocks, double rho);

struct Perturbation {
  std::vector<std::size_t> entries;  // ParamSet indices
  Epsilon epsilon;
  double norm() const;
};

// Perturbations built from the grads currently stored in the param set. All
// trainable entries are perturbed; only conv/linear weights are adaptive.
Perturbation sam_perturbation(const ParamSet& params, double rho);
Perturbation asam_perturbation(const ParamSet& params, double rho);
Perturbation perturbation_for(SharpnessMode mode, const ParamSet& params, double rho);
void apply_perturbation(ParamSet& params, const Perturbation& p);

// Exact copy of trainable values for restoring after a perturbation.
class WeightSnapshot {
 public:
  explicit WeightSnapshot(const ParamSet& params);
  void restore(ParamSet& params) const;

 private:
  std::vector<std::vector<float>> values_;
};

// --- robustness hooks ------------------------------------------------------

// sigma_n = W_max * sigma_G / G_max
double additive_noise_sigma(double w_max, const AdditiveNoiseConfig& config);

// Adds N(0, sigma_n^2) to every conv/linear weight, sigma_n per layer from
// the current weights. Returns the sigma_n used for each weight layer.
std::vector<double> inject_training_noise(ParamSet& params, const AdditiveNoiseConfig& config, RngStream& rng);

// Clamps conv/linear weights; returns how many values were changed.
std::size_t clip_weights(ParamSet& params, const ClipConfig& config);

// --- the training step -----------------------------------------------------

struct StepConfig {
  OptimizerConfig optimizer;
  SharpnessAwareConfig sharpness;
  RobustnessHookConfig hooks;
};

struct StepReport {
  double loss = 0.0;            // clean-pass loss
  double perturbed_loss = 0.0;  // loss at w + eps (equals loss for mode none)
  double epsilon_norm = 0.0;
  bool degenerate = false;
  std::size_t correct = 0;
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
  std::size_t clipped = 0;
};

// One optimizer update on a minibatch. For SAM/ASAM: gradient at w, eps from
// it, gradient at w + eps, restore w, base step with the second gradient.
// Additive noise (if any) is drawn independently for each forward pass and
// removed before the update; clipping runs after the update.
StepReport training_step(Model& model, const Batch& batch, const StepConfig& config, OptimizerState& state,
                         double lr, std::uint64_t noise_seed, std::uint64_t step_index);

}  // namespace sharpnoise
