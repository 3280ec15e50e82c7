#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "sharpnoise/error.hpp"
#include "sharpnoise/sharpness.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace sharpnoise;
using doctest::Approx;

namespace {

// max over the ellipse |T^-1 eps| <= rho of 1/2|w+eps|^2 - 1/2|w|^2, w in R^2,
// by sweeping the boundary (a convex function peaks on it).
double ellipse_max(double w0, double w1, double rho) {
  double best = -1e300;
  for (int k = 0; k < 200000; ++k) {
    const double t = 2 * std::numbers::pi * k / 200000;
    const double e0 = rho * std::fabs(w0) * std::cos(t), e1 = rho * std::fabs(w1) * std::sin(t);
    best = std::max(best, w0 * e0 + w1 * e1 + 0.5 * (e0 * e0 + e1 * e1));
  }
  return best;
}

// Keskar value of a 2-D objective by enumerating the four box corners.
double corner_keskar(fixtures::FunctionLoss& f, double epsilon) {
  auto w = f.params()[0].tensor.data();
  const std::vector<float> w0(w.begin(), w.end());
  auto mean_loss = [&] {
    double s = 0;
    for (std::size_t b = 0; b < f.num_batches(); ++b) s += f.loss(b, false);
    return s / static_cast<double>(f.num_batches());
  };
  const double base = mean_loss();
  double best = base;
  for (const double s0 : {-1.0, 1.0})
    for (const double s1 : {-1.0, 1.0}) {
      w[0] = static_cast<float>(w0[0] + s0 * epsilon * (std::fabs(w0[0]) + 1));
      w[1] = static_cast<float>(w0[1] + s1 * epsilon * (std::fabs(w0[1]) + 1));
      best = std::max(best, mean_loss());
    }
  std::copy(w0.begin(), w0.end(), w.begin());
  return 100 * (best - base) / (1 + base);
}

std::vector<Batch> random_batches(std::uint64_t seed, std::size_t count, std::size_t n, const ModelSpec& s) {
  gradcheck::RngStream rng(seed, 0);
  std::vector<Batch> out(count);
  for (auto& b : out) {
    b.images = gradcheck::random_tensor(rng, {n, s.in_channels, s.in_height, s.in_width});
    b.labels = gradcheck::random_labels(rng, n, s.num_classes);
  }
  return out;
}

ModelRecord record(const std::string& id, double sharp, double acc0, double acc3) {
  ModelRecord r;
  r.model_id = id;
  r.method = "sgd+none";
  r.curve.model_id = id;
  r.curve.points = {summarize_runs(0.0, {acc0}), summarize_runs(0.3, {acc3})};
  SharpnessReport s;
  s.model_id = id;
  s.metric = SharpnessMetric::kAsamM;
  s.rho = 0.5;
  s.value = sharp;
  r.sharpness.push_back(s);
  return r;
}

}  // namespace

TEST_CASE("sam m-sharpness on the isotropic quadratic is exact") {
  auto f = fixtures::quadratic_loss({3.0f, 4.0f});
  CHECK(m_sharpness_sam(f, 0.5) == Approx(2.625).epsilon(1e-6));
  CHECK(m_sharpness_sam(f, 0.0) == 0.0);
  CHECK(m_sharpness_asam(f, 0.0) == 0.0);
  // weights are restored
  CHECK(f.params()[0].tensor.data()[0] == 3.0f);

  // per-batch centres: average of rho |w - c_b| + rho^2 / 2
  auto g = fixtures::quadratic_loss({3.0f, 4.0f}, {{0, 0}, {3, 0}, {1, 1}});
  const double expect = (0.5 * 5 + 0.5 * 4 + 0.5 * std::sqrt(13.0)) / 3 + 0.125;
  CHECK(m_sharpness_sam(g, 0.5) == Approx(expect).epsilon(1e-6));
}

TEST_CASE("asam m-sharpness against the ellipse maximum") {
  auto f = fixtures::quadratic_loss({3.0f, 4.0f});
  const double first_order = m_sharpness_asam(f, 0.5);
  const double e0 = 0.5 * 27 / std::sqrt(337.0), e1 = 0.5 * 64 / std::sqrt(337.0);
  CHECK(first_order == Approx(3 * e0 + 4 * e1 + 0.5 * (e0 * e0 + e1 * e1)).epsilon(1e-6));
  const double exact = ellipse_max(3, 4, 0.5);
  CHECK(first_order <= exact + 1e-9);
  CHECK(first_order >= 0.9 * exact);
}

TEST_CASE("constant loss has zero sharpness") {
  fixtures::FunctionLoss f({1.0f, -2.0f, 0.5f}, 2, [](std::size_t, std::span<const float>, std::span<float> g) {
    std::fill(g.begin(), g.end(), 0.0f);
    return 1.25;
  });
  CHECK(m_sharpness_sam(f, 0.7) == 0.0);
  CHECK(m_sharpness_asam(f, 0.7) == 0.0);
  CHECK(keskar_sharpness(f) == 0.0);
}

TEST_CASE("keskar matches corner enumeration") {
  auto f = fixtures::quadratic_loss({3.0f, 4.0f});
  const double expect = 100 * (3 * 0.004 + 4 * 0.005 + 0.5 * (0.004 * 0.004 + 0.005 * 0.005)) / 13.5;
  CHECK(expect == Approx(0.237189).epsilon(1e-5));
  CHECK(keskar_sharpness(f) == Approx(expect).epsilon(1e-4));
  CHECK(keskar_sharpness(f) == Approx(corner_keskar(f, 1e-3)).epsilon(1e-4));

  gradcheck::RngStream rng(5, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> centres(3, std::vector<double>(2));
    for (auto& c : centres)
      for (auto& v : c) v = 2 * rng.normal();
    auto g = fixtures::quadratic_loss({static_cast<float>(rng.normal()), static_cast<float>(rng.normal())}, centres);
    const double eps = 0.05;
    CHECK(keskar_sharpness(g, {eps, 10}) == Approx(corner_keskar(g, eps)).epsilon(1e-4));
  }
}

TEST_CASE("keskar is monotone in the box size") {
  auto f = fixtures::quadratic_loss({0.3f, -1.0f, 2.0f}, {{1, 0, 0}, {0, -2, 1}});
  double last = 0.0;
  for (const double eps : {1e-4, 2e-4, 4e-4, 8e-4, 1.6e-3}) {
    const double v = keskar_sharpness(f, {eps, 10});
    CHECK(v >= last);
    last = v;
  }

  const ModelSpec s = fixtures::rescaling_mlp();
  Model m(s, 3);
  const auto batches = random_batches(4, 2, 8, s);
  ModelLoss oracle(m, batches);
  const double a = keskar_sharpness(oracle, {1e-3, 10});
  const double b = keskar_sharpness(oracle, {2e-3, 10});
  CHECK(a > 0.0);
  CHECK(b >= a);
}

TEST_CASE("keskar at a local maximum is zero") {
  // L = -1/2 |w - c|^2 with c = w: every move lowers the loss
  const std::vector<double> c = {0.5, -1.5};
  fixtures::FunctionLoss f({0.5f, -1.5f}, 1, [c](std::size_t, std::span<const float> w, std::span<float> g) {
    double l = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - c[i];
      l -= 0.5 * d * d;
      if (!g.empty()) g[i] = static_cast<float>(-d);
    }
    return l;
  });
  CHECK(keskar_sharpness(f) == 0.0);
}

TEST_CASE("m-sharpness under node rescaling") {
  const ModelSpec s = fixtures::rescaling_mlp();
  const auto batches = random_batches(11, 4, 8, s);
  Model base(s, 6);
  Model scaled = base.clone();
  fixtures::rescale_layers(scaled, 4.0f);
  ModelLoss lb(base, batches), ls(scaled, batches);
  CHECK(std::fabs(m_sharpness_asam(lb, 0.5) - m_sharpness_asam(ls, 0.5)) <= 1e-4);
  CHECK(std::fabs(m_sharpness_sam(lb, 0.5) - m_sharpness_sam(ls, 0.5)) > 1e-3);
  CHECK_THROWS_AS(m_sharpness(lb, SharpnessMode::kNone, 0.5), ConfigError);
  ModelLoss empty(base, {});
  CHECK_THROWS_AS(m_sharpness_sam(empty, 0.5), ConfigError);
}

TEST_CASE("performance gap") {
  RobustnessCurve c;
  c.model_id = "x";
  c.points = {summarize_runs(0.0, {0.90}), summarize_runs(0.3, {0.72}), summarize_runs(0.1, {0.90})};
  CHECK(performance_gap(c, 0.3) == Approx(0.18));
  CHECK(performance_gap(c, 0.1) == 0.0);
  CHECK_THROWS_AS(performance_gap(c, 0.2), ConfigError);
  c.points.erase(c.points.begin());
  CHECK_THROWS_AS(performance_gap(c, 0.3), ConfigError);
}

TEST_CASE("pearson") {
  const std::vector<double> x = {1, 2, 3, 4};
  std::vector<double> y2, yn;
  for (const double v : x) {
    y2.push_back(2 * v + 1);
    yn.push_back(-v);
  }
  CHECK(pearson(x, y2) == Approx(1.0));
  CHECK(pearson(x, yn) == Approx(-1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}) == Approx(0.5));
  CHECK_THROWS_AS(pearson(x, std::vector<double>(4, 1.0)), NumericError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), NumericError);
}

TEST_CASE("correlation table") {
  std::vector<ModelRecord> models = {record("a", 0.1, 0.9, 0.85), record("b", 0.3, 0.9, 0.75),
                                     record("c", 0.2, 0.9, 0.80)};
  const SharpnessMetric metric[] = {SharpnessMetric::kAsamM};
  const double rho[] = {0.5};
  const double sigma[] = {0.3};
  const auto cells = rho_sweep_correlation(models, metric, rho, sigma);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].r == Approx(1.0));
  CHECK(cells[0].gaps[1] == Approx(0.15));

  models.pop_back();
  CHECK_THROWS(rho_sweep_correlation(models, metric, rho, sigma));

  const double other_rho[] = {1.0};
  models.push_back(record("c", 0.2, 0.9, 0.80));
  CHECK_THROWS_AS(rho_sweep_correlation(models, metric, other_rho, sigma), ConfigError);
}
