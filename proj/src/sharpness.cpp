#include "sharpnoise/sharpness.hpp"

#include <algorithm>
#include <cmath>

#include "sharpnoise/error.hpp"
#include "sharpnoise/ops.hpp"

namespace sharpnoise {

std::string_view metric_name(SharpnessMetric metric) {
  switch (metric) {
    case SharpnessMetric::kSamM: return "sam_m";
    case SharpnessMetric::kAsamM: return "asam_m";
    case SharpnessMetric::kKeskar: return "keskar";
  }
  return "unknown";
}

SharpnessMetric parse_metric(std::string_view name) {
  if (name == "sam_m") return SharpnessMetric::kSamM;
  if (name == "asam_m") return SharpnessMetric::kAsamM;
  if (name == "keskar") return SharpnessMetric::kKeskar;
  throw ConfigError("unknown sharpness metric '" + std::string(name) + "'");
}

double ModelLoss::loss(std::size_t batch, bool with_grad) {
  const Batch& b = batches_[batch];
  Tape tape;
  tape.set_recording(with_grad);
  if (with_grad) model_.params().zero_grad();
  const Tensor logits = model_.forward(tape, b.images, ForwardMode::kEval);
  const Tensor loss = ops::softmax_cross_entropy(tape, logits, b.labels);
  if (with_grad) tape.backward(loss);
  return loss.item();
}

double m_sharpness(LossOracle& oracle, SharpnessMode mode, double rho) {
  if (mode == SharpnessMode::kNone) throw ConfigError("m_sharpness: mode must be sam or asam");
  const std::size_t n = oracle.num_batches();
  if (n == 0) throw ConfigError("m_sharpness: empty batch list");
  auto& params = oracle.params();
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double clean = oracle.loss(b, true);
    const Perturbation p = perturbation_for(mode, params, rho);
    const WeightSnapshot snapshot(params);
    apply_perturbation(params, p);
    const double perturbed = oracle.loss(b, false);
    snapshot.restore(params);
    total += perturbed - clean;
  }
  const double value = total / static_cast<double>(n);
  if (!std::isfinite(value)) throw NumericError("m_sharpness: non-finite value");
  return value;
}

double m_sharpness_sam(LossOracle& oracle, double rho) { return m_sharpness(oracle, SharpnessMode::kSam, rho); }

double m_sharpness_asam(LossOracle& oracle, double rho) { return m_sharpness(oracle, SharpnessMode::kAsam, rho); }

namespace {

// Mean loss over all batches; fills summed grads into `grads` when given.
double full_loss(LossOracle& oracle, std::vector<std::vector<double>>* grads,
                 const std::vector<std::size_t>& entries) {
  const std::size_t n = oracle.num_batches();
  auto& params = oracle.params();
  if (grads) {
    grads->assign(entries.size(), {});
    for (std::size_t k = 0; k < entries.size(); ++k) (*grads)[k].assign(params[entries[k]].tensor.numel(), 0.0);
  }
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    total += oracle.loss(b, grads != nullptr);
    if (!grads) continue;
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto g = params[entries[k]].tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) (*grads)[k][i] += g[i];
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

double keskar_sharpness(LossOracle& oracle, const KeskarOptions& options) {
  if (oracle.num_batches() == 0) throw ConfigError("keskar_sharpness: empty batch list");
  if (!(options.epsilon >= 0.0)) throw ConfigError("keskar_sharpness: epsilon must be >= 0");
  auto& params = oracle.params();
  std::vector<std::size_t> entries;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (is_trainable(params[i].role)) entries.push_back(i);

  const WeightSnapshot snapshot(params);
  std::vector<std::vector<double>> clean(entries.size()), half(entries.size()), eps(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto w = params[entries[k]].tensor.data();
    clean[k].assign(w.begin(), w.end());
    half[k].resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) half[k][i] = options.epsilon * (std::fabs(clean[k][i]) + 1.0);
    eps[k].assign(w.size(), 0.0);
  }

  std::vector<std::vector<double>> grads;
  const double base = full_loss(oracle, &grads, entries);
  double best = base;
  for (std::size_t step = 0; step < options.steps; ++step) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      auto w = params[entries[k]].tensor.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = grads[k][i];
        const double dir = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        eps[k][i] = std::clamp(eps[k][i] + dir * half[k][i], -half[k][i], half[k][i]);
        w[i] = static_cast<float>(clean[k][i] + eps[k][i]);
      }
    }
    const bool last = step + 1 == options.steps;
    best = std::max(best, full_loss(oracle, last ? nullptr : &grads, entries));
  }
  snapshot.restore(params);
  const double value = 100.0 * (best - base) / (1.0 + base);
  if (!std::isfinite(value)) throw NumericError("keskar_sharpness: non-finite value");
  return value;
}

double performance_gap(const RobustnessCurve& curve, double sigma_c) {
  const CurvePoint* clean = curve.find(0.0);
  const CurvePoint* noisy = curve.find(sigma_c);
  if (!clean) throw ConfigError("performance_gap: curve '" + curve.model_id + "' lacks sigma_c = 0");
  if (!noisy) {
    throw ConfigError("performance_gap: curve '" + curve.model_id + "' lacks sigma_c = " + std::to_string(sigma_c));
  }
  return clean->mean - noisy->mean;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("pearson: series lengths differ");
  if (xs.size() < 2) throw NumericError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

SharpnessReport measure_sharpness(Model& model, std::span<const Batch> batches, const std::string& model_id,
                                  SharpnessMetric metric, double rho, std::size_t keskar_steps) {
  ModelLoss oracle(model, batches);
  SharpnessReport report{model_id, metric, rho, batches.empty() ? 0 : batches.front().size(), batches.size(), 0.0};
  switch (metric) {
    case SharpnessMetric::kSamM: report.value = m_sharpness_sam(oracle, rho); break;
    case SharpnessMetric::kAsamM: report.value = m_sharpness_asam(oracle, rho); break;
    case SharpnessMetric::kKeskar: report.value = keskar_sharpness(oracle, {rho, keskar_steps}); break;
  }
  return report;
}

double ModelRecord::sharpness_value(SharpnessMetric metric, double rho) const {
  for (const auto& s : sharpness)
    if (s.metric == metric && std::fabs(s.rho - rho) <= 1e-12 * std::max(1.0, std::fabs(rho))) return s.value;
  throw ConfigError("model '" + model_id + "' has no " + std::string(metric_name(metric)) +
                    " sharpness at rho = " + std::to_string(rho));
}

std::vector<CorrelationCell> rho_sweep_correlation(std::span<const ModelRecord> models,
                                                   std::span<const SharpnessMetric> metrics,
                                                   std::span<const double> rho_grid,
                                                   std::span<const double> sigma_levels) {
  if (models.size() < 3) {
    throw ConfigError("rho_sweep_correlation: need at least 3 model variants, got " + std::to_string(models.size()));
  }
  std::vector<CorrelationCell> cells;
  for (const auto metric : metrics) {
    for (const double rho : rho_grid) {
      for (const double sigma : sigma_levels) {
        CorrelationCell cell;
        cell.metric = metric;
        cell.rho = rho;
        cell.sigma_c = sigma;
        for (const auto& m : models) {
          cell.model_ids.push_back(m.model_id);
          cell.sharpness.push_back(m.sharpness_value(metric, rho));
          cell.gaps.push_back(performance_gap(m.curve, sigma));
        }
        cell.r = pearson(cell.sharpness, cell.gaps);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

}  // namespace sharpnoise
