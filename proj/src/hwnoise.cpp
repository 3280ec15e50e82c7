#include "sharpnoise/hwnoise.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "sharpnoise/error.hpp"
#include "sharpnoise/rng.hpp"

namespace sharpnoise {

void NoiseSpec::validate() const {
  if (!(sigma_c >= 0.0)) throw ConfigError("noise spec: sigma_c must be >= 0");
  if (!(g_max > 0.0)) throw ConfigError("noise spec: G_max must be > 0");
  if (runs < 1) throw ConfigError("noise spec: runs must be >= 1");
}

ConductanceMap map_to_conductance(std::span<const float> weights, double g_max) {
  ConductanceMap map;
  map.w_max = weight_stats(weights).w_max;
  map.all_zero = map.w_max == 0.0;
  map.conductances.resize(weights.size());
  const double factor = map.all_zero ? 0.0 : g_max / map.w_max;
  for (std::size_t i = 0; i < weights.size(); ++i) map.conductances[i] = weights[i] * factor;
  return map;
}

std::vector<float> unmap_conductance(const ConductanceMap& map, double g_max) {
  std::vector<float> w(map.conductances.size());
  const double factor = map.all_zero ? 0.0 : map.w_max / g_max;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(map.conductances[i] * factor);
  return w;
}

std::uint64_t conductance_stream(std::size_t run_index) { return stream_id("conductance", run_index); }

NoisyRealization apply_conductance_noise(const ParamSet& params, const NoiseSpec& spec, std::size_t run_index) {
  spec.validate();
  NoisyRealization r{run_index, params.clone(), conductance_stream(run_index)};
  if (spec.sigma_c == 0.0) return r;
  const CounterRng rng(spec.seed, r.stream);
  std::uint64_t offset = 0;
  for (auto& e : r.params) {
    if (e.role != ParamRole::kWeight) continue;
    auto w = e.tensor.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double delta = 1.0 + spec.sigma_c * rng.normal_at(offset + i);
      w[i] = static_cast<float>(w[i] * delta);
    }
    offset += w.size();
  }
  return r;
}

namespace {

class ObserverAttachment {
 public:
  ObserverAttachment(Model& model, std::vector<ops::BatchNormObserver>& observers) : model_(model) {
    model_.set_observers(&observers);
  }
  ~ObserverAttachment() { model_.set_observers(nullptr); }
  ObserverAttachment(const ObserverAttachment&) = delete;
  ObserverAttachment& operator=(const ObserverAttachment&) = delete;

 private:
  Model& model_;
};

}  // namespace

void adabs_recalibrate(Model& model, std::span<const Batch> calibration) {
  if (calibration.empty()) throw ConfigError("adabs: empty calibration set");
  if (model.batchnorm_layers() == 0) throw ConfigError("adabs: model has no batch-norm layers");
  std::vector<ops::BatchNormObserver> observers(model.batchnorm_layers());
  {
    ObserverAttachment attach(model, observers);
    Tape tape;
    NoGradGuard no_grad(tape);
    for (const auto& batch : calibration) model.forward(tape, batch.images, ForwardMode::kCalibrate);
  }
  const auto entries = model.running_stat_entries();
  auto& params = model.params();
  for (std::size_t l = 0; l < entries.size(); ++l) {
    const auto& obs = observers[l];
    auto mean = params[entries[l].first].tensor.data();
    auto var = params[entries[l].second].tensor.data();
    const double n = static_cast<double>(obs.batches);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = static_cast<float>(obs.mean_sum[c] / n);
      var[c] = static_cast<float>(obs.var_sum[c] / n);
    }
  }
}

double evaluate_accuracy(Model& model, std::span<const Batch> batches) {
  Tape tape;
  NoGradGuard no_grad(tape);
  std::size_t correct = 0, total = 0;
  for (const auto& batch : batches) {
    correct += correct_count(model.forward(tape, batch.images, ForwardMode::kEval), batch.labels);
    total += batch.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

const CurvePoint* RobustnessCurve::find(double sigma_c) const {
  for (const auto& p : points)
    if (std::fabs(p.sigma_c - sigma_c) < 1e-12) return &p;
  return nullptr;
}

CurvePoint summarize_runs(double sigma_c, std::vector<double> accuracies) {
  CurvePoint p;
  p.sigma_c = sigma_c;
  p.accuracies = std::move(accuracies);
  if (p.accuracies.empty()) return p;
  // Offsets from the first run, so identical runs give exactly that value.
  const double base = p.accuracies.front();
  double sum = 0.0;
  for (const double a : p.accuracies) sum += a - base;
  p.mean = base + sum / static_cast<double>(p.accuracies.size());
  double sq = 0.0;
  for (const double a : p.accuracies) sq += (a - p.mean) * (a - p.mean);
  p.std = std::sqrt(sq / static_cast<double>(p.accuracies.size()));
  return p;
}

CurvePoint evaluate_noisy(const Model& model, const NoiseSpec& spec, std::span<const Batch> test,
                          std::span<const Batch> calibration, const EvalOptions& options) {
  spec.validate();
  if (options.adabs && calibration.empty()) throw ConfigError("evaluate_noisy: AdaBS requires a calibration set");

  auto run_one = [&](std::size_t run) {
    Model noisy = model.clone();
    noisy.params().assign_values(apply_conductance_noise(model.params(), spec, run).params);
    if (options.adabs) adabs_recalibrate(noisy, calibration);
    return evaluate_accuracy(noisy, test);
  };

  std::vector<double> acc(spec.runs);
  if (spec.sigma_c == 0.0) {
    // Every realization is the clean model; there is nothing to recalibrate.
    Model clean = model.clone();
    std::fill(acc.begin(), acc.end(), evaluate_accuracy(clean, test));
  } else if (options.threads <= 1 || spec.runs == 1) {
    for (std::size_t r = 0; r < spec.runs; ++r) acc[r] = run_one(r);
  } else {
    const std::size_t workers = std::min(options.threads, spec.runs);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t r = w; r < spec.runs; r += workers) acc[r] = run_one(r);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return summarize_runs(spec.sigma_c, std::move(acc));
}

}  // namespace sharpnoise
