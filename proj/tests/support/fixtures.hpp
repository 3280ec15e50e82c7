#pragma once

// Small models and objectives shared by the unit tests and the acceptance
// binary.

#include <cmath>
#include <functional>
#include <vector>

#include "sharpnoise/batch.hpp"
#include "sharpnoise/experiment.hpp"
#include "sharpnoise/model.hpp"
#include "sharpnoise/optim.hpp"
#include "sharpnoise/sharpness.hpp"

namespace fixtures {

using namespace sharpnoise;

// Single-entry param set holding w as a "linear weight" of layer 0.
inline ParamSet weight_vector(std::vector<float> w, ParamRole role = ParamRole::kWeight) {
  ParamSet p;
  const std::size_t n = w.size();
  p.add("w", 0, role, Tensor({n}, std::move(w), true));
  return p;
}

// Sets grad = value on every trainable entry, for L = 1/2 |w|^2.
inline void quadratic_grad(ParamSet& p) {
  for (auto& e : p) {
    if (!is_trainable(e.role)) continue;
    e.tensor.zero_grad();
    auto g = e.tensor.grad();
    auto v = e.tensor.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = v[i];
  }
}

inline ModelSpec rescaling_mlp() {
  ModelSpec s;
  s.arch = Architecture::kMlp;
  s.in_channels = 1;
  s.in_height = 1;
  s.in_width = 6;
  s.num_classes = 3;
  s.mlp_hidden = {5};
  s.mlp_bias = false;
  return s;
}

// fc1 *= k, fc2 /= k: the network function is unchanged for ReLU.
inline void rescale_layers(Model& m, float k) {
  for (auto& v : m.params().at("fc1.weight").tensor.data()) v *= k;
  for (auto& v : m.params().at("fc2.weight").tensor.data()) v /= k;
}

// L(w + eps) on one batch with eps from the gradient at w.
inline double perturbed_loss(Model& m, const Batch& batch, SharpnessMode mode, double rho) {
  ModelLoss oracle(m, std::span<const Batch>(&batch, 1));
  oracle.loss(0, true);
  const Perturbation p = perturbation_for(mode, m.params(), rho);
  const WeightSnapshot clean(m.params());
  apply_perturbation(m.params(), p);
  const double out = oracle.loss(0, false);
  clean.restore(m.params());
  return out;
}

// Closed-form objective over a single weight vector. f(batch, w, g) returns
// the loss and writes its gradient into g when g is non-empty.
class FunctionLoss final : public LossOracle {
 public:
  using Fn = std::function<double(std::size_t, std::span<const float>, std::span<float>)>;

  FunctionLoss(std::vector<float> w, std::size_t batches, Fn fn)
      : params_(weight_vector(std::move(w))), batches_(batches), fn_(std::move(fn)) {}

  ParamSet& params() override { return params_; }
  std::size_t num_batches() const override { return batches_; }
  double loss(std::size_t batch, bool with_grad) override {
    auto& t = params_[0].tensor;
    if (!with_grad) return fn_(batch, t.data(), {});
    t.zero_grad();
    return fn_(batch, t.data(), t.grad());
  }

 private:
  ParamSet params_;
  std::size_t batches_;
  Fn fn_;
};

// 1/2 |w - c_b|^2 with per-batch centres (all zero when empty).
inline FunctionLoss quadratic_loss(std::vector<float> w, std::vector<std::vector<double>> centres = {}) {
  const std::size_t n = centres.empty() ? 1 : centres.size();
  return FunctionLoss(std::move(w), n, [centres](std::size_t b, std::span<const float> w, std::span<float> g) {
    double l = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - (centres.empty() ? 0.0 : centres[b][i]);
      l += 0.5 * d * d;
      if (!g.empty()) g[i] = static_cast<float>(d);
    }
    return l;
  });
}

// Tiny image study: 4-class 3x8x8 gratings, a narrow smallcnn and a few
// epochs. Trains in a second or two.
inline ExperimentConfig image_study(std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.seed = seed;
  c.model.arch = Architecture::kSmallCnn;
  c.model.num_classes = 4;
  c.model.in_channels = 3;
  c.model.in_height = c.model.in_width = 8;
  c.model.cnn_widths = {8, 8, 16, 16};
  c.data.source = DataSource::kSynthetic;
  c.data.synthetic = {800, 400, 4, 3, 8, 8, 0.6};
  c.epochs = 4;
  c.batch_size = 32;
  c.augment = false;
  c.optimizer.milestones = {3};
  c.calibration_batches = 4;
  c.data.calibration_size = c.calibration_batches * c.batch_size;
  c.data.seed = derive_seed(seed, "data");
  return c;
}

}  // namespace fixtures
