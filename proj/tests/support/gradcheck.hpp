#pragma once

// Central finite-difference checks of tape gradients, plus a catalogue of
// randomly shaped cases for every differentiable primitive. Shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sharpnoise/ops.hpp"
#include "sharpnoise/rng.hpp"
#include "sharpnoise/tensor.hpp"

namespace gradcheck {

using sharpnoise::RngStream;
using sharpnoise::Shape;
using sharpnoise::Tape;
using sharpnoise::Tensor;

using OpFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct Case {
  std::string label;
  std::vector<Tensor> inputs;  // all checked
  OpFn op;
};

struct Result {
  double rel_error = 0.0;  // worst over inputs of |a - fd| / max(|a|, |fd|)
  std::size_t evaluations = 0;
};

// Projection L = sum_i r_i out_i, accumulated in double.
inline double project(const Tensor& out, const std::vector<double>& r) {
  double s = 0.0;
  const auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) s += r[i] * d[i];
  return s;
}

inline Result check(const Case& c, std::uint64_t seed, double h = 1e-2) {
  Result res;
  std::vector<Tensor> inputs;
  for (const auto& t : c.inputs) inputs.push_back(Tensor(t.shape(), std::vector<float>(t.data().begin(), t.data().end()), true));

  Tape tape;
  const Tensor out = c.op(tape, inputs);
  RngStream rng(seed, sharpnoise::stream_id("gradcheck-projection"));
  std::vector<double> r(out.numel());
  for (auto& v : r) v = rng.uniform() * 2.0 - 1.0;
  std::vector<float> rf(r.begin(), r.end());
  const Tensor weights(out.shape(), rf);
  const Tensor loss = sharpnoise::ops::sum(tape, sharpnoise::ops::mul(tape, out, weights));
  tape.backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    const std::vector<float> analytic = x.has_grad() ? std::vector<float>(x.grad().begin(), x.grad().end())
                                                     : std::vector<float>(x.numel(), 0.0f);
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    auto data = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float x0 = data[i];
      const float xp = static_cast<float>(x0 + h), xm = static_cast<float>(x0 - h);
      Tape quiet;
      quiet.set_recording(false);
      data[i] = xp;
      const double lp = project(c.op(quiet, inputs), r);
      data[i] = xm;
      const double lm = project(c.op(quiet, inputs), r);
      data[i] = x0;
      res.evaluations += 2;
      const double fd = (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
      diff2 += (fd - analytic[i]) * (fd - analytic[i]);
      a2 += static_cast<double>(analytic[i]) * analytic[i];
      f2 += fd * fd;
    }
    const double scale = std::sqrt(std::max(a2, f2));
    if (scale > 1e-9) res.rel_error = std::max(res.rel_error, std::sqrt(diff2) / scale);
  }
  return res;
}

// --- random inputs ------------------------------------------------------------

inline std::size_t pick(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline Tensor random_tensor(RngStream& rng, Shape shape, double scale = 1.0) {
  std::vector<float> v(sharpnoise::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return Tensor(std::move(shape), std::move(v));
}

// Values at least `gap` away from zero so a step of h < gap never crosses a
// ReLU kink.
inline Tensor away_from_zero(RngStream& rng, Shape shape, double gap = 0.05) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (auto& x : t.data()) {
    if (std::fabs(x) < gap) x = x < 0 ? static_cast<float>(x - 2 * gap) : static_cast<float>(x + 2 * gap);
  }
  return t;
}

// Distinct values spaced by `gap`, randomly placed, so max-pool winners do
// not change under a step of h < gap / 2.
inline Tensor distinct(RngStream& rng, Shape shape, double gap = 0.05) {
  const std::size_t n = sharpnoise::shape_numel(shape);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<float>((static_cast<double>(order[i]) - static_cast<double>(n) / 2.0) * gap);
  return Tensor(std::move(shape), std::move(v));
}

inline std::vector<int> random_labels(RngStream& rng, std::size_t n, std::size_t k) {
  std::vector<int> y(n);
  for (auto& l : y) l = static_cast<int>(rng.below(k));
  return y;
}

// --- catalogue ------------------------------------------------------------------

using Maker = std::function<Case(RngStream&)>;

struct Primitive {
  std::string name;
  Maker make;
};

inline std::vector<Primitive> primitives() {
  namespace ops = sharpnoise::ops;
  std::vector<Primitive> p;
  p.push_back({"matmul", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 5), k = pick(rng, 1, 6), m = pick(rng, 1, 5);
                 return Case{"matmul", {random_tensor(rng, {n, k}), random_tensor(rng, {k, m})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::matmul(t, in[0], in[1]); }};
               }});
  p.push_back({"linear", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 5), i = pick(rng, 1, 7), o = pick(rng, 1, 5);
                 return Case{"linear",
                             {random_tensor(rng, {n, i}), random_tensor(rng, {o, i}), random_tensor(rng, {o})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::linear(t, in[0], in[1], in[2]); }};
               }});
  p.push_back({"bias_add", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 3), c = pick(rng, 1, 4), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
                 const bool image = rng.below(2) == 1;
                 Shape s = image ? Shape{n, c, h, w} : Shape{n, c};
                 return Case{"bias_add", {random_tensor(rng, s), random_tensor(rng, {c})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::bias_add(t, in[0], in[1]); }};
               }});
  p.push_back({"conv2d", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
                 const auto k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
                 const auto h = pick(rng, k, 6), w = pick(rng, k, 6);
                 const bool bias = rng.below(2) == 1;
                 std::vector<Tensor> in{random_tensor(rng, {n, c, h, w}), random_tensor(rng, {o, c, k, k})};
                 if (bias) in.push_back(random_tensor(rng, {o}));
                 const ops::Conv2dOptions opt{stride, pad};
                 return Case{"conv2d k" + std::to_string(k) + " s" + std::to_string(stride) + " p" + std::to_string(pad),
                             in, [opt](Tape& t, const std::vector<Tensor>& x) {
                               return ops::conv2d(t, x[0], x[1], x.size() > 2 ? x[2] : Tensor{}, opt);
                             }};
               }});
  p.push_back({"batchnorm2d_train", [](RngStream& rng) {
                 const auto n = pick(rng, 2, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 2, 3);
                 auto state = std::make_shared<ops::BatchNormState>();
                 state->running_mean = Tensor::zeros({c});
                 state->running_var = Tensor::full({c}, 1.0f);
                 return Case{"batchnorm2d train",
                             {random_tensor(rng, {n, c, h, w}), random_tensor(rng, {c}), random_tensor(rng, {c})},
                             [state](Tape& t, const std::vector<Tensor>& in) {
                               return ops::batchnorm2d(t, in[0], in[1], in[2], *state, ops::BatchNormMode::kTrain);
                             }};
               }});
  p.push_back({"batchnorm2d_eval", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
                 auto state = std::make_shared<ops::BatchNormState>();
                 state->running_mean = random_tensor(rng, {c});
                 Tensor var = random_tensor(rng, {c});
                 for (auto& v : var.data()) v = 0.5f + std::fabs(v);
                 state->running_var = var;
                 return Case{"batchnorm2d eval",
                             {random_tensor(rng, {n, c, h, w}), random_tensor(rng, {c}), random_tensor(rng, {c})},
                             [state](Tape& t, const std::vector<Tensor>& in) {
                               return ops::batchnorm2d(t, in[0], in[1], in[2], *state, ops::BatchNormMode::kEval);
                             }};
               }});
  p.push_back({"relu", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 4), m = pick(rng, 1, 8);
                 return Case{"relu", {away_from_zero(rng, {n, m})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::relu(t, in[0]); }};
               }});
  p.push_back({"maxpool2d", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), k = pick(rng, 2, 3);
                 const auto h = k * pick(rng, 1, 3), w = k * pick(rng, 1, 3);
                 return Case{"maxpool2d k" + std::to_string(k), {distinct(rng, {n, c, h, w})},
                             [k](Tape& t, const std::vector<Tensor>& in) { return ops::maxpool2d(t, in[0], k); }};
               }});
  p.push_back({"avgpool2d", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), k = pick(rng, 2, 3);
                 const auto h = k * pick(rng, 1, 3), w = k * pick(rng, 1, 3);
                 return Case{"avgpool2d k" + std::to_string(k), {random_tensor(rng, {n, c, h, w})},
                             [k](Tape& t, const std::vector<Tensor>& in) { return ops::avgpool2d(t, in[0], k); }};
               }});
  p.push_back({"global_avgpool", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 3), c = pick(rng, 1, 4), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
                 return Case{"global_avgpool", {random_tensor(rng, {n, c, h, w})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::global_avgpool(t, in[0]); }};
               }});
  p.push_back({"flatten", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 3);
                 return Case{"flatten", {random_tensor(rng, {n, c, h})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::flatten(t, in[0]); }};
               }});
  p.push_back({"add", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 4), m = pick(rng, 1, 5);
                 return Case{"add", {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::add(t, in[0], in[1]); }};
               }});
  p.push_back({"mul", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 4), m = pick(rng, 1, 5);
                 return Case{"mul", {random_tensor(rng, {n, m}), random_tensor(rng, {n, m})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::mul(t, in[0], in[1]); }};
               }});
  p.push_back({"scale", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 4), m = pick(rng, 1, 5);
                 const float f = static_cast<float>(rng.normal() * 2.0);
                 return Case{"scale", {random_tensor(rng, {n, m})},
                             [f](Tape& t, const std::vector<Tensor>& in) { return ops::scale(t, in[0], f); }};
               }});
  p.push_back({"sum", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 4), m = pick(rng, 1, 5);
                 return Case{"sum", {random_tensor(rng, {n, m})},
                             [](Tape& t, const std::vector<Tensor>& in) { return ops::sum(t, in[0]); }};
               }});
  p.push_back({"softmax_cross_entropy", [](RngStream& rng) {
                 const auto n = pick(rng, 1, 5), k = pick(rng, 2, 6);
                 auto labels = std::make_shared<std::vector<int>>(random_labels(rng, n, k));
                 return Case{"softmax_cross_entropy", {random_tensor(rng, {n, k}, 2.0)},
                             [labels](Tape& t, const std::vector<Tensor>& in) {
                               return ops::softmax_cross_entropy(t, in[0], *labels);
                             }};
               }});
  return p;
}

}  // namespace gradcheck
