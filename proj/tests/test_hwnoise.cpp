#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "sharpnoise/error.hpp"
#include "sharpnoise/experiment.hpp"
#include "sharpnoise/hwnoise.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace sharpnoise;
using doctest::Approx;

namespace {

bool same_bits(std::span<const float> x, std::span<const float> y) {
  return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
}

ModelSpec tiny_cnn() {
  ModelSpec s;
  s.in_height = s.in_width = 6;
  s.cnn_widths = {4, 4, 6, 6};
  return s;
}

Batch random_batch(std::uint64_t seed, std::size_t n, const ModelSpec& s) {
  gradcheck::RngStream rng(seed, 0);
  Batch b;
  b.images = gradcheck::random_tensor(rng, {n, s.in_channels, s.in_height, s.in_width});
  b.labels = gradcheck::random_labels(rng, n, s.num_classes);
  return b;
}

// Trained once, shared by the experiment-style cases below.
struct Trained {
  ExperimentConfig config = fixtures::image_study(3);
  DataBundle data;
  std::vector<Batch> test, calibration;
  Model model{config.model, 0};

  Trained() {
    data = load_data(config.data);
    model = train_model(config, data).model;
    test = test_batches(config, data);
    calibration = calibration_batches(config, data);
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

}  // namespace

TEST_CASE("conductance mapping") {
  const std::vector<float> w = {0.5f, -0.25f, 0.0f, 0.125f};
  const ConductanceMap map = map_to_conductance(w, 25.0);
  CHECK(map.w_max == 0.5);
  CHECK(map.conductances[0] == Approx(25.0));
  CHECK(map.conductances[1] == Approx(-12.5));
  CHECK(map.conductances[2] == 0.0);
  const auto back = unmap_conductance(map, 25.0);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(back[i] == Approx(w[i]).epsilon(1e-6));

  const std::vector<float> zeros(3, 0.0f);
  const ConductanceMap z = map_to_conductance(zeros, 25.0);
  CHECK(z.all_zero);
  CHECK(unmap_conductance(z, 25.0) == zeros);
}

TEST_CASE("sigma_c = 0 is the identity") {
  Model m(tiny_cnn(), 2);
  const NoisyRealization r = apply_conductance_noise(m.params(), {0.0, 25.0, 7, 1}, 3);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    CHECK(same_bits(m.params()[i].tensor.data(), r.params[i].tensor.data()));
}

TEST_CASE("noise touches conv/linear weights only and is deterministic") {
  Model m(tiny_cnn(), 2);
  const NoiseSpec spec{0.2, 25.0, 11, 3};
  const NoisyRealization a = apply_conductance_noise(m.params(), spec, 1);
  const NoisyRealization b = apply_conductance_noise(m.params(), spec, 1);
  const NoisyRealization c = apply_conductance_noise(m.params(), spec, 2);
  bool run_differs = false;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& e = m.params()[i];
    CHECK(same_bits(a.params[i].tensor.data(), b.params[i].tensor.data()));
    if (e.role == ParamRole::kWeight) {
      CHECK_FALSE(same_bits(e.tensor.data(), a.params[i].tensor.data()));
      run_differs = run_differs || !same_bits(a.params[i].tensor.data(), c.params[i].tensor.data());
    } else {
      CHECK(same_bits(e.tensor.data(), a.params[i].tensor.data()));
    }
  }
  CHECK(run_differs);
  CHECK(a.stream == conductance_stream(1));
}

TEST_CASE("multiplicative factors have mean 1 and std sigma_c") {
  // delta = W'/W on a layer of ones
  for (const double sigma : {0.1, 0.4}) {
    ParamSet p = fixtures::weight_vector(std::vector<float>(200000, 1.0f));
    const NoisyRealization r = apply_conductance_noise(p, {sigma, 25.0, 5, 1}, 0);
    double sum = 0, sq = 0;
    for (const float d : r.params[0].tensor.data()) {
      sum += d;
      sq += static_cast<double>(d) * d;
    }
    const double n = 200000.0, mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::fabs(mean - 1.0) < 0.005);
    CHECK(std::fabs(sd / sigma - 1.0) < 0.02);
  }
}

TEST_CASE("noise spec validation") {
  CHECK_THROWS_AS(NoiseSpec({-0.1, 25.0, 0, 1}).validate(), ConfigError);
  CHECK_THROWS_AS(NoiseSpec({0.1, 0.0, 0, 1}).validate(), ConfigError);
  CHECK_THROWS_AS(NoiseSpec({0.1, 25.0, 0, 0}).validate(), ConfigError);
}

TEST_CASE("adabs with one batch reproduces that batch's statistics") {
  const ModelSpec s = tiny_cnn();
  Model m(s, 4);
  const Batch batch = random_batch(6, 10, s);
  const ParamSet before = m.params().clone();
  adabs_recalibrate(m, std::span<const Batch>(&batch, 1));

  // Independent recompute of the first BN layer's input statistics.
  Tape tape;
  NoGradGuard guard(tape);
  const Tensor y = ops::conv2d(tape, batch.images, m.params().at("conv1.weight").tensor, {}, {1, 1});
  const std::size_t n = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
  const auto d = y.data();
  const auto rm = m.params().at("bn1.running_mean").tensor.data();
  const auto rv = m.params().at("bn1.running_var").tensor.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < hw; ++k) sum += d[(i * c + ch) * hw + k];
    const double cnt = static_cast<double>(n * hw), mean = sum / cnt;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < hw; ++k) sq += std::pow(d[(i * c + ch) * hw + k] - mean, 2);
    CHECK(rm[ch] == Approx(mean).epsilon(1e-4).scale(1.0));
    CHECK(rv[ch] == Approx(sq / (cnt - 1)).epsilon(1e-4));
  }

  // Nothing but running statistics moved.
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto role = before[i].role;
    if (role == ParamRole::kBnRunningMean || role == ParamRole::kBnRunningVar) continue;
    CHECK(same_bits(before[i].tensor.data(), m.params()[i].tensor.data()));
  }
}

TEST_CASE("adabs averages per-batch statistics") {
  const ModelSpec s = tiny_cnn();
  Model m(s, 4);
  const std::vector<Batch> batches = {random_batch(1, 6, s), random_batch(2, 9, s)};
  Model a = m.clone(), b = m.clone(), both = m.clone();
  adabs_recalibrate(a, std::span<const Batch>(&batches[0], 1));
  adabs_recalibrate(b, std::span<const Batch>(&batches[1], 1));
  adabs_recalibrate(both, batches);
  for (const auto& [mi, vi] : both.running_stat_entries()) {
    for (const std::size_t idx : {mi, vi}) {
      const auto x = a.params()[idx].tensor.data(), y = b.params()[idx].tensor.data();
      const auto z = both.params()[idx].tensor.data();
      for (std::size_t k = 0; k < z.size(); ++k) CHECK(z[k] == Approx(0.5 * (x[k] + y[k])).epsilon(1e-5));
    }
  }
  CHECK_THROWS_AS(adabs_recalibrate(m, std::span<const Batch>{}), ConfigError);
}

TEST_CASE("evaluate_noisy: clean point, run-order and thread invariance") {
  const ModelSpec s = tiny_cnn();
  Model m(s, 9);
  const std::vector<Batch> test = {random_batch(30, 20, s), random_batch(31, 20, s)};
  const std::vector<Batch> calib = {random_batch(40, 16, s)};
  const double clean = evaluate_accuracy(m, test);

  const CurvePoint p0 = evaluate_noisy(m, {0.0, 25.0, 1, 3}, test, calib, {true, 1});
  CHECK(p0.std == 0.0);
  CHECK(p0.mean == clean);
  CHECK(p0.accuracies.size() == 3);

  const NoiseSpec spec{0.3, 25.0, 2, 5};
  const CurvePoint serial = evaluate_noisy(m, spec, test, calib, {true, 1});
  const CurvePoint parallel = evaluate_noisy(m, spec, test, calib, {true, 3});
  CHECK(serial.accuracies == parallel.accuracies);

  // each run recomputed on its own, last to first
  std::vector<double> reversed;
  for (std::size_t run = spec.runs; run-- > 0;) {
    Model noisy = m.clone();
    noisy.params().assign_values(apply_conductance_noise(m.params(), spec, run).params);
    adabs_recalibrate(noisy, calib);
    reversed.push_back(evaluate_accuracy(noisy, test));
  }
  const CurvePoint shuffled = summarize_runs(0.3, {reversed.rbegin(), reversed.rend()});
  CHECK(shuffled.accuracies == serial.accuracies);
  const CurvePoint backwards = summarize_runs(0.3, reversed);
  CHECK(backwards.mean == Approx(serial.mean).epsilon(1e-12));
  CHECK(backwards.std == Approx(serial.std).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate_noisy(m, spec, test, {}, {true, 1}), ConfigError);
}

TEST_CASE("summarize_runs uses the population std") {
  const CurvePoint p = summarize_runs(0.1, {0.5, 0.7});
  CHECK(p.mean == Approx(0.6));
  CHECK(p.std == Approx(0.1));
}

TEST_CASE("trained model: noise hurts, adabs helps") {
  auto& t = trained();
  const double clean = evaluate_accuracy(t.model, t.test);
  CHECK(clean > 0.6);
  const NoiseSpec low{0.1, 25.0, 5, 10}, high{0.4, 25.0, 5, 10}, mid{0.3, 25.0, 5, 10};
  const double a_low = evaluate_noisy(t.model, low, t.test, t.calibration, {false, 1}).mean;
  const double a_high = evaluate_noisy(t.model, high, t.test, t.calibration, {false, 1}).mean;
  CHECK(a_high <= a_low);
  const double without = evaluate_noisy(t.model, mid, t.test, t.calibration, {false, 1}).mean;
  const double with = evaluate_noisy(t.model, mid, t.test, t.calibration, {true, 1}).mean;
  MESSAGE("clean " << clean << "  0.1: " << a_low << "  0.4: " << a_high << "  0.3 off/on: " << without << "/"
                   << with);
  CHECK(with >= without);
}
