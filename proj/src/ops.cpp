#include "sharpnoise/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sharpnoise/error.hpp"

namespace sharpnoise::ops {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_rank(const char* op, const char* name, const Tensor& t, std::size_t rank) {
  if (!t.defined()) shape_fail(op, std::string(name) + " is undefined");
  if (t.rank() != rank) {
    shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                       shape_str(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "operand shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void accumulate(const Tensor& t, std::span<const float> delta) {
  if (t.defined() && t.requires_grad()) const_cast<Tensor&>(t).accumulate_grad(delta);
}

bool needs(const Tensor& t) { return t.defined() && t.requires_grad(); }

std::size_t spatial_size(const Tensor& x) {
  std::size_t s = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) s *= x.dim(i);
  return s;
}

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

void im2col(const float* img, const ConvGeometry& g, float* col) {
  const std::size_t hw = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* row = col + ((c * g.kh + ki) * g.kw + kj) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* img) {
  const std::size_t hw = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const float* row = col + ((c * g.kh + ki) * g.kw + kj) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          float* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank("matmul", "lhs", a, 2);
  require_rank("matmul", "rhs", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({n, m});
  MapRM(out.data().data(), n, m).noalias() =
      CMapRM(a.data().data(), n, k) * CMapRM(b.data().data(), k, m);
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, n, k, m] {
      CMapRM dc(out.grad().data(), n, m);
      if (needs(a)) {
        std::vector<float> da(n * k);
        MapRM(da.data(), n, k).noalias() = dc * CMapRM(b.data().data(), k, m).transpose();
        accumulate(a, da);
      }
      if (needs(b)) {
        std::vector<float> db(k * m);
        MapRM(db.data(), k, m).noalias() = CMapRM(a.data().data(), n, k).transpose() * dc;
        accumulate(b, db);
      }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", "input", x, 2);
  require_rank("linear", "weight", weight, 2);
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    shape_fail("linear", "input features " + std::to_string(in) + " != weight " +
                             shape_str(weight.shape()) + " in-features");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    shape_fail("linear", "bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(out_dim) + " outputs");
  }
  Tensor out = Tensor::zeros({n, out_dim});
  MapRM y(out.data().data(), n, out_dim);
  y.noalias() = CMapRM(x.data().data(), n, in) * CMapRM(weight.data().data(), out_dim, in).transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_dim; ++c) y(r, c) += bias.data()[c];
  }
  if (tape.wants({&x, &weight, &bias})) {
    tape.record(out, [x, weight, bias, out, n, in, out_dim] {
      CMapRM dy(out.grad().data(), n, out_dim);
      if (needs(x)) {
        std::vector<float> dx(n * in);
        MapRM(dx.data(), n, in).noalias() = dy * CMapRM(weight.data().data(), out_dim, in);
        accumulate(x, dx);
      }
      if (needs(weight)) {
        std::vector<float> dw(out_dim * in);
        MapRM(dw.data(), out_dim, in).noalias() = dy.transpose() * CMapRM(x.data().data(), n, in);
        accumulate(weight, dw);
      }
      if (needs(bias)) {
        std::vector<float> db(out_dim);
        for (std::size_t c = 0; c < out_dim; ++c) {
          double s = 0.0;
          for (std::size_t r = 0; r < n; ++r) s += dy(r, c);
          db[c] = static_cast<float>(s);
        }
        accumulate(bias, db);
      }
    });
  }
  return out;
}

Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (!x.defined() || x.rank() < 2) shape_fail("bias_add", "input must have rank >= 2");
  require_rank("bias_add", "bias", bias, 1);
  const std::size_t n = x.dim(0), c = x.dim(1), s = spatial_size(x);
  if (bias.dim(0) != c) {
    shape_fail("bias_add", "bias " + shape_str(bias.shape()) + " does not match channel dim of " +
                               shape_str(x.shape()));
  }
  Tensor out = x.clone();
  out.set_requires_grad(false);
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < s; ++p) o[(i * c + ch) * s + p] += bias.data()[ch];
  if (tape.wants({&x, &bias})) {
    tape.record(out, [x, bias, out, n, c, s] {
      auto g = out.grad();
      accumulate(x, g);
      if (needs(bias)) {
        std::vector<float> db(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < s; ++p) acc += g[(i * c + ch) * s + p];
          db[ch] = static_cast<float>(acc);
        }
        accumulate(bias, db);
      }
    });
  }
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options) {
  require_rank("conv2d", "input", x, 4);
  require_rank("conv2d", "weight", weight, 4);
  if (options.stride == 0) shape_fail("conv2d", "stride must be positive");
  const std::size_t n = x.dim(0), out_c = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3),
                 options.stride, options.padding, 0, 0};
  if (weight.dim(1) != g.channels) {
    shape_fail("conv2d", "input channels " + std::to_string(g.channels) + " != weight " +
                             shape_str(weight.shape()) + " in-channels");
  }
  if (g.height + 2 * g.pad < g.kh || g.width + 2 * g.pad < g.kw) {
    shape_fail("conv2d", "kernel " + shape_str(weight.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_c)) {
    shape_fail("conv2d", "bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(out_c) + " output channels");
  }
  g.out_h = (g.height + 2 * g.pad - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.pad - g.kw) / g.stride + 1;
  const std::size_t patch = g.patch(), pixels = g.out_pixels();
  const std::size_t in_image = g.channels * g.height * g.width, out_image = out_c * pixels;

  Tensor out = Tensor::zeros({n, out_c, g.out_h, g.out_w});
  std::vector<float> col(patch * pixels);
  CMapRM w(weight.data().data(), out_c, patch);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.data().data() + i * in_image, g, col.data());
    MapRM y(out.data().data() + i * out_image, out_c, pixels);
    y.noalias() = w * CMapRM(col.data(), patch, pixels);
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_c; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias.data()[o];
    }
  }
  if (tape.wants({&x, &weight, &bias})) {
    tape.record(out, [x, weight, bias, out, g, n, out_c, patch, pixels, in_image, out_image] {
      const auto gout = out.grad();
      std::vector<float> col(patch * pixels), dcol(patch * pixels);
      std::vector<float> dx(needs(x) ? x.numel() : 0, 0.0f);
      MatRM dw = MatRM::Zero(static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(patch));
      CMapRM w(weight.data().data(), out_c, patch);
      for (std::size_t i = 0; i < n; ++i) {
        CMapRM dy(gout.data() + i * out_image, out_c, pixels);
        if (needs(weight)) {
          im2col(x.data().data() + i * in_image, g, col.data());
          dw.noalias() += dy * CMapRM(col.data(), patch, pixels).transpose();
        }
        if (needs(x)) {
          MapRM(dcol.data(), patch, pixels).noalias() = w.transpose() * dy;
          col2im(dcol.data(), g, dx.data() + i * in_image);
        }
      }
      if (needs(x)) accumulate(x, dx);
      if (needs(weight)) accumulate(weight, std::span<const float>(dw.data(), out_c * patch));
      if (needs(bias)) {
        std::vector<float> db(out_c);
        for (std::size_t o = 0; o < out_c; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < pixels; ++p) acc += gout[i * out_image + o * pixels + p];
          db[o] = static_cast<float>(acc);
        }
        accumulate(bias, db);
      }
    });
  }
  return out;
}

Tensor batchnorm2d(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, BatchNormMode mode) {
  require_rank("batchnorm2d", "input", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != c) {
      shape_fail("batchnorm2d", "per-channel tensor does not match " + std::to_string(c) +
                                    " channels of input " + shape_str(x.shape()));
    }
  }
  const std::size_t count = n * s;
  if (mode != BatchNormMode::kEval && count == 0) shape_fail("batchnorm2d", "empty batch");
  const auto xs = x.data();
  std::vector<float> xhat(x.numel());
  std::vector<double> invstd(c);
  const bool batch_stats = mode != BatchNormMode::kEval;

  if (state.observer && mode == BatchNormMode::kCalibrate && state.observer->mean_sum.size() != c) {
    state.observer->mean_sum.assign(c, 0.0);
    state.observer->var_sum.assign(c, 0.0);
    state.observer->batches = 0;
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (batch_stats) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < s; ++p) acc += xs[(i * c + ch) * s + p];
      mean = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < s; ++p) {
          const double d = xs[(i * c + ch) * s + p] - mean;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      if (mode == BatchNormMode::kTrain) {
        auto rm = state.running_mean.data();
        auto rv = state.running_var.data();
        rm[ch] = static_cast<float>((1.0 - state.momentum) * rm[ch] + state.momentum * mean);
        rv[ch] = static_cast<float>((1.0 - state.momentum) * rv[ch] + state.momentum * unbiased);
      } else if (state.observer) {
        state.observer->mean_sum[ch] += mean;
        state.observer->var_sum[ch] += unbiased;
      }
    } else {
      mean = state.running_mean.data()[ch];
      var = state.running_var.data()[ch];
    }
    invstd[ch] = 1.0 / std::sqrt(var + static_cast<double>(state.eps));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < s; ++p) {
        const std::size_t idx = (i * c + ch) * s + p;
        xhat[idx] = static_cast<float>((xs[idx] - mean) * invstd[ch]);
      }
  }
  if (mode == BatchNormMode::kCalibrate && state.observer) ++state.observer->batches;

  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < s; ++p) {
        const std::size_t idx = (i * c + ch) * s + p;
        o[idx] = gamma.data()[ch] * xhat[idx] + beta.data()[ch];
      }

  if (tape.wants({&x, &gamma, &beta})) {
    tape.record(out, [x, gamma, beta, out, xhat = std::move(xhat), invstd = std::move(invstd),
                      batch_stats, n, c, s, count] {
      const auto dy = out.grad();
      std::vector<float> dgamma(c), dbeta(c);
      std::vector<float> dx(needs(x) ? x.numel() : 0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < s; ++p) {
            const std::size_t idx = (i * c + ch) * s + p;
            sum_dy += dy[idx];
            sum_dy_xhat += static_cast<double>(dy[idx]) * xhat[idx];
          }
        dgamma[ch] = static_cast<float>(sum_dy_xhat);
        dbeta[ch] = static_cast<float>(sum_dy);
        if (dx.empty()) continue;
        const double gscale = gamma.data()[ch] * invstd[ch];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < s; ++p) {
            const std::size_t idx = (i * c + ch) * s + p;
            if (batch_stats) {
              const double m = static_cast<double>(count);
              dx[idx] = static_cast<float>(gscale / m *
                                           (m * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat));
            } else {
              dx[idx] = static_cast<float>(gscale * dy[idx]);
            }
          }
      }
      if (!dx.empty()) accumulate(x, dx);
      accumulate(gamma, dgamma);
      accumulate(beta, dbeta);
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto xs = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) o[i] = xs[i] > 0.0f ? xs[i] : 0.0f;
  if (tape.wants({&x})) {
    tape.record(out, [x, out] {
      const auto g = out.grad();
      const auto xs = x.data();
      std::vector<float> dx(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) dx[i] = xs[i] > 0.0f ? g[i] : 0.0f;
      accumulate(x, dx);
    });
  }
  return out;
}

Tensor maxpool2d(Tape& tape, const Tensor& x, std::size_t kernel) {
  require_rank("maxpool2d", "input", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel == 0 || h < kernel || w < kernel) {
    shape_fail("maxpool2d", "kernel " + std::to_string(kernel) + " does not fit input " + shape_str(x.shape()));
  }
  const std::size_t oh = h / kernel, ow = w / kernel;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const auto xs = x.data();
  auto o = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const float* src = xs.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * kernel) * w + ox * kernel;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (oy * kernel + ky) * w + ox * kernel + kx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t oi = plane * oh * ow + oy * ow + ox;
        o[oi] = src[best];
        argmax[oi] = plane * h * w + best;
      }
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, argmax = std::move(argmax)] {
      const auto g = out.grad();
      std::vector<float> dx(x.numel(), 0.0f);
      for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
      accumulate(x, dx);
    });
  }
  return out;
}

Tensor avgpool2d(Tape& tape, const Tensor& x, std::size_t kernel) {
  require_rank("avgpool2d", "input", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel == 0 || h < kernel || w < kernel) {
    shape_fail("avgpool2d", "kernel " + std::to_string(kernel) + " does not fit input " + shape_str(x.shape()));
  }
  const std::size_t oh = h / kernel, ow = w / kernel;
  const float inv = 1.0f / static_cast<float>(kernel * kernel);
  Tensor out = Tensor::zeros({n, c, oh, ow});
  const auto xs = x.data();
  auto o = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx)
            acc += xs[plane * h * w + (oy * kernel + ky) * w + ox * kernel + kx];
        o[plane * oh * ow + oy * ow + ox] = static_cast<float>(acc) * inv;
      }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, n, c, h, w, oh, ow, kernel, inv] {
      const auto g = out.grad();
      std::vector<float> dx(x.numel(), 0.0f);
      for (std::size_t plane = 0; plane < n * c; ++plane)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const float v = g[plane * oh * ow + oy * ow + ox] * inv;
            for (std::size_t ky = 0; ky < kernel; ++ky)
              for (std::size_t kx = 0; kx < kernel; ++kx)
                dx[plane * h * w + (oy * kernel + ky) * w + ox * kernel + kx] += v;
          }
      accumulate(x, dx);
    });
  }
  return out;
}

Tensor global_avgpool(Tape& tape, const Tensor& x) {
  require_rank("global_avgpool", "input", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  if (s == 0) shape_fail("global_avgpool", "empty spatial extent in " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({n, c});
  const auto xs = x.data();
  auto o = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double acc = 0.0;
    for (std::size_t p = 0; p < s; ++p) acc += xs[plane * s + p];
    o[plane] = static_cast<float>(acc / static_cast<double>(s));
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, n, c, s] {
      const auto g = out.grad();
      std::vector<float> dx(x.numel());
      const float inv = 1.0f / static_cast<float>(s);
      for (std::size_t plane = 0; plane < n * c; ++plane)
        for (std::size_t p = 0; p < s; ++p) dx[plane * s + p] = g[plane] * inv;
      accumulate(x, dx);
    });
  }
  return out;
}

Tensor flatten(Tape& tape, const Tensor& x) {
  if (!x.defined() || x.rank() < 1) shape_fail("flatten", "input must have rank >= 1");
  const std::size_t n = x.dim(0);
  Tensor out = x.reshaped({n, n == 0 ? 0 : x.numel() / n});
  if (tape.wants({&x})) {
    tape.record(out, [x, out] { accumulate(x, out.grad()); });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out] {
      accumulate(a, out.grad());
      accumulate(b, out.grad());
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out] {
      const auto g = out.grad();
      std::vector<float> da(g.size()), db(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] = g[i] * b.data()[i];
        db[i] = g[i] * a.data()[i];
      }
      accumulate(a, da);
      accumulate(b, db);
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, float factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.data()[i] * factor;
  if (tape.wants({&x})) {
    tape.record(out, [x, out, factor] {
      const auto g = out.grad();
      std::vector<float> dx(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * factor;
      accumulate(x, dx);
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (const float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (tape.wants({&x})) {
    tape.record(out, [x, out] {
      std::vector<float> dx(x.numel(), out.grad()[0]);
      accumulate(x, dx);
    });
  }
  return out;
}

std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", "logits", logits, 2);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    shape_fail("softmax_cross_entropy", "got " + std::to_string(labels.size()) + " labels for logits " +
                                            shape_str(logits.shape()));
  }
  if (k == 0) shape_fail("softmax_cross_entropy", "logits have zero classes");
  std::vector<double> losses(n);
  const auto z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      shape_fail("softmax_cross_entropy", "label " + std::to_string(labels[i]) + " out of range for " +
                                              std::to_string(k) + " classes");
    }
    const float* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    losses[i] = std::log(se) + mx - row[labels[i]];
  }
  return losses;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  const auto losses = per_sample_cross_entropy(logits, labels);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (const double l : losses) total += l;
  Tensor out = Tensor::scalar(static_cast<float>(n ? total / static_cast<double>(n) : 0.0));
  if (tape.wants({&logits})) {
    std::vector<int> targets(labels.begin(), labels.end());
    tape.record(out, [logits, out, targets = std::move(targets), n, k] {
      const double upstream = out.grad()[0];
      const auto z = logits.data();
      std::vector<float> dz(n * k);
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = z.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double se = 0.0;
        for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) {
          double p = std::exp(row[j] - mx) / se;
          if (static_cast<int>(j) == targets[i]) p -= 1.0;
          dz[i * k + j] = static_cast<float>(upstream * p / static_cast<double>(n));
        }
      }
      accumulate(logits, dz);
    });
  }
  return out;
}

}  // namespace sharpnoise::ops
