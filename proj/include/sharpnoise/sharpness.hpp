#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sharpnoise/batch.hpp"
#include "sharpnoise/hwnoise.hpp"
#include "sharpnoise/model.hpp"
#include "sharpnoise/optim.hpp"

namespace sharpnoise {

enum class SharpnessMetric { kSamM, kAsamM, kKeskar };

std::string_view metric_name(SharpnessMetric metric);

// Neighborhood sizes for correlation sweeps: log-spaced, reaching well past
// the training grids since the best-correlating rho can lie far outside them.
inline constexpr double kRhoSweepGrid[] = {0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
SharpnessMetric parse_metric(std::string_view name);

// A differentiable objective split into minibatches. loss(b, true) leaves
// d(mean loss of batch b)/dw in the trainable entries' grads.
class LossOracle {
 public:
  virtual ~LossOracle() = default;
  virtual ParamSet& params() = 0;
  virtual std::size_t num_batches() const = 0;
  virtual double loss(std::size_t batch, bool with_grad) = 0;
};

// Eval-mode cross-entropy of a model over fixed batches.
class ModelLoss final : public LossOracle {
 public:
  ModelLoss(Model& model, std::span<const Batch> batches) : model_(model), batches_(batches) {}

  ParamSet& params() override { return model_.params(); }
  std::size_t num_batches() const override { return batches_.size(); }
  double loss(std::size_t batch, bool with_grad) override;

 private:
  Model& model_;
  std::span<const Batch> batches_;
};

// Average over minibatches of L_S(w + eps_S) - L_S(w), with eps_S the
// first-order worst case in the l2 ball (SAM) or the |w|-scaled ellipsoid
// (ASAM) of radius rho, estimated from that minibatch's own gradient.
double m_sharpness(LossOracle& oracle, SharpnessMode mode, double rho);
double m_sharpness_sam(LossOracle& oracle, double rho);
double m_sharpness_asam(LossOracle& oracle, double rho);

struct KeskarOptions {
  double epsilon = 1e-3;
  std::size_t steps = 10;
};

// Box |eps_i| <= epsilon * (|w_i| + 1), maximized by projected sign-gradient
// ascent with per-coordinate step equal to the half-width. Returns
// 100 * (L_max - L(w)) / (1 + L(w)), L being the mean over all batches and
// L_max the largest loss seen among the iterates (the start included).
double keskar_sharpness(LossOracle& oracle, const KeskarOptions& options = {});

double performance_gap(const RobustnessCurve& curve, double sigma_c);

// Sample Pearson correlation. Fewer than two points or zero variance in
// either series raise NumericError.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct SharpnessReport {
  std::string model_id;
  SharpnessMetric metric = SharpnessMetric::kAsamM;
  double rho = 0.0;  // neighborhood size; box epsilon for keskar
  std::size_t m = 0;
  std::size_t num_batches = 0;
  double value = 0.0;
};

SharpnessReport measure_sharpness(Model& model, std::span<const Batch> batches, const std::string& model_id,
                                  SharpnessMetric metric, double rho, std::size_t keskar_steps = 10);

struct ModelRecord {
  std::string model_id;
  std::string method;
  RobustnessCurve curve;
  std::vector<SharpnessReport> sharpness;

  // Throws ConfigError when the (metric, rho) measurement is missing.
  double sharpness_value(SharpnessMetric metric, double rho) const;
};

struct CorrelationCell {
  SharpnessMetric metric = SharpnessMetric::kAsamM;
  double rho = 0.0;
  double sigma_c = 0.0;
  std::vector<std::string> model_ids;
  std::vector<double> sharpness;
  std::vector<double> gaps;
  double r = 0.0;
};

// Pearson r between sharpness and performance gap across models for every
// (metric, rho, sigma_c) cell. Needs at least three models.
std::vector<CorrelationCell> rho_sweep_correlation(std::span<const ModelRecord> models,
                                                   std::span<const SharpnessMetric> metrics,
                                                   std::span<const double> rho_grid,
                                                   std::span<const double> sigma_levels);

}  // namespace sharpnoise
