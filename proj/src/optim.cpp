#include "sharpnoise/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sharpnoise/error.hpp"
#include "sharpnoise/ops.hpp"

namespace sharpnoise {

std::string_view base_optimizer_name(BaseOptimizer base) {
  return base == BaseOptimizer::kSgd ? "sgd" : "adam";
}

BaseOptimizer parse_base_optimizer(std::string_view name) {
  if (name == "sgd") return BaseOptimizer::kSgd;
  if (name == "adam") return BaseOptimizer::kAdam;
  throw ConfigError("unknown base optimizer '" + std::string(name) + "'");
}

std::string_view sharpness_mode_name(SharpnessMode mode) {
  switch (mode) {
    case SharpnessMode::kNone: return "none";
    case SharpnessMode::kSam: return "sam";
    case SharpnessMode::kAsam: return "asam";
  }
  return "none";
}

SharpnessMode parse_sharpness_mode(std::string_view name) {
  if (name == "none") return SharpnessMode::kNone;
  if (name == "sam") return SharpnessMode::kSam;
  if (name == "asam") return SharpnessMode::kAsam;
  throw ConfigError("unknown sharpness-aware mode '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("optimizer: lr_decay must be in (0, 1]");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: Adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be > 0");
}

double OptimizerConfig::lr_at_epoch(std::size_t epoch) const {
  std::size_t decays = 0;
  for (const auto m : milestones)
    if (epoch >= m) ++decays;
  if (decay_every > 0) decays += epoch / decay_every;
  return lr * std::pow(lr_decay, static_cast<double>(decays));
}

OptimizerConfig OptimizerConfig::adam_defaults() {
  OptimizerConfig c;
  c.base = BaseOptimizer::kAdam;
  c.lr = 1e-3;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  return c;
}

void SharpnessAwareConfig::validate() const {
  if (mode != SharpnessMode::kNone && !(rho >= 0.0)) throw ConfigError("sharpness-aware: rho must be >= 0");
}

void RobustnessHookConfig::validate() const {
  if (additive_noise) {
    if (!(additive_noise->sigma_g >= 0.0)) throw ConfigError("additive noise: sigma_G must be >= 0");
    if (!(additive_noise->g_max > 0.0)) throw ConfigError("additive noise: G_max must be > 0");
    if (!(additive_noise->alpha > 0.0)) throw ConfigError("additive noise: alpha must be > 0");
  }
  if (clipping) {
    if (clipping->kind == ClipKind::kFixedC && !(clipping->c > 0.0)) throw ConfigError("clipping: c must be > 0");
    if (clipping->kind == ClipKind::kStdAlpha && !(clipping->alpha > 0.0)) {
      throw ConfigError("clipping: alpha must be > 0");
    }
  }
}

std::optional<ClipConfig> RobustnessHookConfig::effective_clipping() const {
  if (clipping) return clipping;
  if (additive_noise) return ClipConfig{ClipKind::kStdAlpha, additive_noise->alpha, kDefaultClipC};
  return std::nullopt;
}

void base_step(ParamSet& params, const OptimizerConfig& config, OptimizerState& state, double lr) {
  if (state.first.size() != params.size()) {
    state.first.assign(params.size(), {});
    state.second.assign(params.size(), {});
    state.steps = 0;
  }
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    if (!is_trainable(e.role)) continue;
    if (!e.tensor.has_grad()) throw Error("base_step: trainable entry '" + e.name + "' has no gradient");
    auto w = e.tensor.data();
    const auto g = e.tensor.grad();
    const double decay = e.role == ParamRole::kWeight ? config.weight_decay : 0.0;
    auto& m = state.first[i];
    if (config.base == BaseOptimizer::kSgd) {
      const bool use_momentum = config.momentum > 0.0;
      const bool fresh = m.empty();
      if (use_momentum && fresh) m.assign(w.size(), 0.0f);
      for (std::size_t k = 0; k < w.size(); ++k) {
        double d = static_cast<double>(g[k]) + decay * w[k];
        if (use_momentum) {
          d = fresh ? d : config.momentum * m[k] + d;
          m[k] = static_cast<float>(d);
        }
        w[k] = static_cast<float>(w[k] - lr * d);
      }
    } else {
      auto& v = state.second[i];
      if (m.empty()) {
        m.assign(w.size(), 0.0f);
        v.assign(w.size(), 0.0f);
      }
      const double c1 = 1.0 - std::pow(config.beta1, t);
      const double c2 = 1.0 - std::pow(config.beta2, t);
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = static_cast<double>(g[k]) + decay * w[k];
        const double mk = config.beta1 * m[k] + (1.0 - config.beta1) * d;
        const double vk = config.beta2 * v[k] + (1.0 - config.beta2) * d * d;
        m[k] = static_cast<float>(mk);
        v[k] = static_cast<float>(vk);
        w[k] = static_cast<float>(w[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + config.eps));
      }
    }
  }
}

Epsilon sam_epsilon(std::span<const GradBlock> blocks, double rho) {
  Epsilon out;
  double sq = 0.0;
  for (const auto& b : blocks)
    for (const float g : b.grads) sq += static_cast<double>(g) * g;
  out.scaled_grad_norm = std::sqrt(sq);
  out.degenerate = out.scaled_grad_norm == 0.0;
  const double factor = out.degenerate ? 0.0 : rho / out.scaled_grad_norm;
  out.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    std::vector<double> e(b.grads.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = factor * b.grads[i];
    out.blocks.push_back(std::move(e));
  }
  return out;
}

Epsilon asam_epsilon(std::span<const GradBlock> blocks, double rho) {
  Epsilon out;
  double sq = 0.0;
  for (const auto& b : blocks) {
    if (b.adaptive && b.weights.size() != b.grads.size()) {
      throw ShapeError("asam_epsilon: weight and grad blocks differ in size");
    }
    for (std::size_t i = 0; i < b.grads.size(); ++i) {
      const double tg = b.adaptive ? std::fabs(static_cast<double>(b.weights[i])) * b.grads[i] : b.grads[i];
      sq += tg * tg;
    }
  }
  out.scaled_grad_norm = std::sqrt(sq);
  out.degenerate = out.scaled_grad_norm == 0.0;
  const double factor = out.degenerate ? 0.0 : rho / out.scaled_grad_norm;
  out.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    std::vector<double> e(b.grads.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double t2 = b.adaptive ? static_cast<double>(b.weights[i]) * b.weights[i] : 1.0;
      e[i] = factor * t2 * b.grads[i];
    }
    out.blocks.push_back(std::move(e));
  }
  return out;
}

double Perturbation::norm() const {
  double sq = 0.0;
  for (const auto& b : epsilon.blocks)
    for (const double v : b) sq += v * v;
  return std::sqrt(sq);
}

namespace {

Perturbation build_perturbation(const ParamSet& params, double rho, bool adaptive_mode) {
  Perturbation p;
  std::vector<GradBlock> blocks;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params[i];
    if (!is_trainable(e.role)) continue;
    if (!e.tensor.has_grad()) throw Error("perturbation: trainable entry '" + e.name + "' has no gradient");
    p.entries.push_back(i);
    blocks.push_back({e.tensor.data(), e.tensor.grad(), adaptive_mode && e.role == ParamRole::kWeight});
  }
  p.epsilon = adaptive_mode ? asam_epsilon(blocks, rho) : sam_epsilon(blocks, rho);
  return p;
}

}  // namespace

Perturbation sam_perturbation(const ParamSet& params, double rho) { return build_perturbation(params, rho, false); }

Perturbation asam_perturbation(const ParamSet& params, double rho) { return build_perturbation(params, rho, true); }

Perturbation perturbation_for(SharpnessMode mode, const ParamSet& params, double rho) {
  switch (mode) {
    case SharpnessMode::kSam: return sam_perturbation(params, rho);
    case SharpnessMode::kAsam: return asam_perturbation(params, rho);
    case SharpnessMode::kNone: break;
  }
  throw ConfigError("perturbation requested with sharpness-aware mode 'none'");
}

void apply_perturbation(ParamSet& params, const Perturbation& p) {
  for (std::size_t b = 0; b < p.entries.size(); ++b) {
    auto w = params[p.entries[b]].tensor.data();
    const auto& e = p.epsilon.blocks[b];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i] + e[i]);
  }
}

WeightSnapshot::WeightSnapshot(const ParamSet& params) {
  values_.reserve(params.size());
  for (const auto& e : params) {
    if (is_trainable(e.role)) {
      values_.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
    } else {
      values_.emplace_back();
    }
  }
}

void WeightSnapshot::restore(ParamSet& params) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_trainable(params[i].role)) continue;
    std::copy(values_[i].begin(), values_[i].end(), params[i].tensor.data().begin());
  }
}

double additive_noise_sigma(double w_max, const AdditiveNoiseConfig& config) {
  return w_max * config.sigma_g / config.g_max;
}

std::vector<double> inject_training_noise(ParamSet& params, const AdditiveNoiseConfig& config, RngStream& rng) {
  std::vector<double> sigmas;
  for (auto& e : params) {
    if (e.role != ParamRole::kWeight) continue;
    const double sigma = additive_noise_sigma(weight_stats(e.tensor.data()).w_max, config);
    sigmas.push_back(sigma);
    if (sigma == 0.0) continue;
    for (float& w : e.tensor.data()) w = static_cast<float>(w + sigma * rng.normal());
  }
  return sigmas;
}

namespace {

// Largest float not exceeding the bound, so |w| <= bound holds in double.
float float_bound(double bound) {
  float f = static_cast<float>(bound);
  if (static_cast<double>(f) > bound) f = std::nextafter(f, 0.0f);
  return f;
}

std::size_t clamp_span(std::span<float> values, float bound) {
  std::size_t changed = 0;
  for (float& w : values) {
    const float c = std::clamp(w, -bound, bound);
    if (c != w) {
      w = c;
      ++changed;
    }
  }
  return changed;
}

}  // namespace

std::size_t clip_weights(ParamSet& params, const ClipConfig& config) {
  std::size_t changed = 0;
  for (auto& e : params) {
    if (e.role != ParamRole::kWeight) continue;
    const double bound = config.kind == ClipKind::kFixedC ? config.c
                                                          : config.alpha * weight_stats(e.tensor.data()).sigma;
    changed += clamp_span(e.tensor.data(), float_bound(bound));
  }
  return changed;
}

StepReport training_step(Model& model, const Batch& batch, const StepConfig& config, OptimizerState& state,
                         double lr, std::uint64_t noise_seed, std::uint64_t step_index) {
  auto& params = model.params();
  StepReport report;
  Tape tape;

  auto pass = [&](std::uint64_t pass_index, ForwardMode mode) {
    params.zero_grad();
    tape.clear();
    std::optional<WeightSnapshot> before_noise;
    if (config.hooks.additive_noise) {
      before_noise.emplace(params);
      RngStream rng(noise_seed, stream_id("train-noise", step_index, pass_index));
      inject_training_noise(params, *config.hooks.additive_noise, rng);
    }
    const Tensor logits = model.forward(tape, batch.images, mode);
    const Tensor loss = ops::softmax_cross_entropy(tape, logits, batch.labels);
    ++report.forward_passes;
    if (pass_index == 0) report.correct = correct_count(logits, batch.labels);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("training step " + std::to_string(step_index) + ": non-finite loss");
    }
    tape.backward(loss);
    ++report.backward_passes;
    tape.clear();
    if (before_noise) before_noise->restore(params);
    return value;
  };

  report.loss = pass(0, ForwardMode::kTrain);
  report.perturbed_loss = report.loss;
  if (config.sharpness.mode != SharpnessMode::kNone) {
    const Perturbation p = perturbation_for(config.sharpness.mode, params, config.sharpness.rho);
    report.epsilon_norm = p.norm();
    report.degenerate = p.epsilon.degenerate;
    const WeightSnapshot clean(params);
    apply_perturbation(params, p);
    // Batch statistics again, but running statistics advance once per step.
    report.perturbed_loss = pass(1, ForwardMode::kCalibrate);
    clean.restore(params);
  }
  base_step(params, config.optimizer, state, lr);
  if (const auto clip = config.hooks.effective_clipping()) report.clipped = clip_weights(params, *clip);
  return report;
}

}  // namespace sharpnoise
