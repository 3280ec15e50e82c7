#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sharpnoise/ops.hpp"
#include "sharpnoise/params.hpp"

namespace sharpnoise {

enum class Architecture { kMlp, kSmallCnn, kMiniResNet };

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelSpec {
  Architecture arch = Architecture::kSmallCnn;
  std::size_t num_classes = 10;
  // Input geometry; the MLP flattens it.
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  // mlp: hidden widths; bias-free when mlp_bias is false (used for exact
  // node-rescaling checks).
  std::vector<std::size_t> mlp_hidden = {64};
  bool mlp_bias = true;
  // smallcnn: four 3x3 conv+BN+ReLU blocks, pooled after blocks 1 and 3.
  std::vector<std::size_t> cnn_widths = {16, 32, 32, 64};
  // miniresnet: stem width followed by one basic block per stage.
  std::vector<std::size_t> resnet_widths = {16, 32, 64};

  bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

enum class ForwardMode { kTrain, kEval, kCalibrate };

class Model {
 public:
  // Deterministic initialization: Kaiming-uniform weights, zero biases,
  // gamma = 1, beta = 0, running mean 0 / var 1.
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }

  Tensor forward(Tape& tape, const Tensor& input, ForwardMode mode);

  std::size_t batchnorm_layers() const noexcept { return batchnorms_.size(); }
  // Observers receive batch statistics in kCalibrate mode, one per BN layer
  // in forward order. Pass nullptr to detach.
  void set_observers(std::vector<ops::BatchNormObserver>* observers);
  // Indices of (running_mean, running_var) entries, one pair per BN layer.
  std::vector<std::pair<std::size_t, std::size_t>> running_stat_entries() const;

  Model clone() const;

 private:
  struct Conv {
    std::size_t weight;
    std::size_t bias;  // npos when absent
    std::size_t stride;
    std::size_t padding;
  };
  struct BatchNorm {
    std::size_t gamma, beta, mean, var;
    std::size_t ordinal;
  };
  struct Linear {
    std::size_t weight;
    std::size_t bias;
  };
  struct Block {
    Conv conv1;
    BatchNorm bn1;
    Conv conv2;
    BatchNorm bn2;
    bool projection;
    Conv short_conv;
    BatchNorm short_bn;
  };

  Model() = default;

  void build_mlp(std::uint64_t seed);
  void build_smallcnn(std::uint64_t seed);
  void build_miniresnet(std::uint64_t seed);

  Conv add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                std::size_t stride, bool bias, std::uint64_t seed);
  BatchNorm add_bn(const std::string& name, std::size_t channels);
  Linear add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias,
                    std::uint64_t seed);

  Tensor run_conv(Tape& tape, const Conv& conv, const Tensor& x);
  Tensor run_bn(Tape& tape, const BatchNorm& bn, const Tensor& x, ForwardMode mode);
  Tensor run_linear(Tape& tape, const Linear& fc, const Tensor& x);

  ModelSpec spec_;
  ParamSet params_;
  std::size_t next_layer_ = 0;
  std::vector<Linear> linears_;
  std::vector<Conv> convs_;
  std::vector<BatchNorm> batchnorms_;
  std::vector<Block> blocks_;
  std::vector<ops::BatchNormObserver>* observers_ = nullptr;
};

// Fraction of rows whose arg-max logit equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);
std::size_t correct_count(const Tensor& logits, std::span<const int> labels);

}  // namespace sharpnoise
