#pragma once

// Generic analog-hardware noise model. Weights of each conv/linear layer are
// linearly mapped to conductances G_T = W * G_max / W_max and perturbed
// multiplicatively, G = G_T * delta with delta ~ N(1, sigma_c^2). Because the
// map is linear the G_max factor cancels, so realizations are drawn directly
// as W' = W * delta.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sharpnoise/batch.hpp"
#include "sharpnoise/model.hpp"
#include "sharpnoise/params.hpp"

namespace sharpnoise {

struct NoiseSpec {
  double sigma_c = 0.0;
  double g_max = 25.0;
  std::uint64_t seed = 0;
  std::size_t runs = 10;

  void validate() const;
};

struct ConductanceMap {
  std::vector<double> conductances;
  double w_max = 0.0;
  // All-zero layer: mapping is the identity on zeros.
  bool all_zero = false;
};

ConductanceMap map_to_conductance(std::span<const float> weights, double g_max);
std::vector<float> unmap_conductance(const ConductanceMap& map, double g_max);

struct NoisyRealization {
  std::size_t run_index = 0;
  ParamSet params;
  std::uint64_t stream = 0;
};

// Stream id of the delta draws for one run.
std::uint64_t conductance_stream(std::size_t run_index);

// Deterministic in (params, spec.seed, run_index). Only conv/linear weights
// are perturbed; element i of the k-th weight layer uses draw index
// (elements in layers before k) + i.
NoisyRealization apply_conductance_noise(const ParamSet& params, const NoiseSpec& spec, std::size_t run_index);

// Replaces every BN running mean/var with the plain average over the
// calibration batches of the batch statistics observed with the model's
// current (noisy) weights. Nothing else is modified.
void adabs_recalibrate(Model& model, std::span<const Batch> calibration);

// Eval-mode accuracy over all batches.
double evaluate_accuracy(Model& model, std::span<const Batch> batches);

struct CurvePoint {
  double sigma_c = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over runs
  std::vector<double> accuracies;
};

struct RobustnessCurve {
  std::string model_id;
  std::vector<CurvePoint> points;

  const CurvePoint* find(double sigma_c) const;
};

struct EvalOptions {
  bool adabs = false;
  // Worker threads for independent runs; results do not depend on it.
  std::size_t threads = 1;
};

// sigma_c = 0 evaluates the unmodified model once (AdaBS is skipped) and
// reports that accuracy for every run.
CurvePoint evaluate_noisy(const Model& model, const NoiseSpec& spec, std::span<const Batch> test,
                          std::span<const Batch> calibration, const EvalOptions& options);

CurvePoint summarize_runs(double sigma_c, std::vector<double> accuracies);

}  // namespace sharpnoise
