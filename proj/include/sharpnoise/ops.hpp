#pragma once

// Differentiable primitives. Each op computes its value eagerly and, when the
// tape is recording and an input requires a gradient, records a closure that
// propagates the output gradient back to its inputs.

#include <cstddef>
#include <span>
#include <vector>

#include "sharpnoise/tensor.hpp"

namespace sharpnoise::ops {

// [n, k] x [k, m] -> [n, m]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// x [n, in] times weight [out, in] transposed, plus optional bias [out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Adds bias [c] along axis 1 of a [n, c] or [n, c, h, w] tensor.
Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// x [n, c, h, w], weight [o, c, kh, kw], optional bias [o]. Lowered to
// im2col + GEMM one image at a time.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias = {},
              Conv2dOptions options = {});

enum class BatchNormMode {
  kTrain,      // batch statistics, running statistics updated
  kEval,       // running statistics
  kCalibrate,  // batch statistics, observed into a BatchNormObserver
};

// Per-layer sums of batch statistics gathered in kCalibrate mode.
struct BatchNormObserver {
  std::vector<double> mean_sum;
  std::vector<double> var_sum;
  std::size_t batches = 0;
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
  BatchNormObserver* observer = nullptr;
};

// Batch-stat variance used for normalization is the biased estimate; the
// statistic written to running_var (and reported to observers) is unbiased.
Tensor batchnorm2d(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, BatchNormMode mode);

Tensor relu(Tape& tape, const Tensor& x);
Tensor maxpool2d(Tape& tape, const Tensor& x, std::size_t kernel = 2);
Tensor avgpool2d(Tape& tape, const Tensor& x, std::size_t kernel = 2);
// [n, c, h, w] -> [n, c]
Tensor global_avgpool(Tape& tape, const Tensor& x);
// [n, ...] -> [n, prod(...)]
Tensor flatten(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, float factor);
Tensor sum(Tape& tape, const Tensor& x);

// Mean softmax cross-entropy of logits [n, k] against class labels.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

// Per-sample losses without recording (used by metrics that need l_s).
std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace sharpnoise::ops
