#include "sharpnoise/model.hpp"

#include <cmath>
#include <limits>

#include "sharpnoise/error.hpp"
#include "sharpnoise/rng.hpp"

namespace sharpnoise {
namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed, std::size_t param_index) {
  Tensor t = Tensor::zeros(std::move(shape));
  RngStream rng(seed, stream_id("init", param_index));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

ops::BatchNormMode bn_mode(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::kTrain: return ops::BatchNormMode::kTrain;
    case ForwardMode::kEval: return ops::BatchNormMode::kEval;
    case ForwardMode::kCalibrate: return ops::BatchNormMode::kCalibrate;
  }
  return ops::BatchNormMode::kEval;
}

}  // namespace

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::kMlp: return "mlp";
    case Architecture::kSmallCnn: return "smallcnn";
    case Architecture::kMiniResNet: return "miniresnet";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "mlp") return Architecture::kMlp;
  if (name == "smallcnn") return Architecture::kSmallCnn;
  if (name == "miniresnet") return Architecture::kMiniResNet;
  throw ConfigError("unknown architecture id '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
  j = nlohmann::json{{"arch", architecture_name(spec.arch)},
                     {"num_classes", spec.num_classes},
                     {"in_channels", spec.in_channels},
                     {"in_height", spec.in_height},
                     {"in_width", spec.in_width},
                     {"mlp_hidden", spec.mlp_hidden},
                     {"mlp_bias", spec.mlp_bias},
                     {"cnn_widths", spec.cnn_widths},
                     {"resnet_widths", spec.resnet_widths}};
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
  ModelSpec d;
  spec.arch = parse_architecture(j.value("arch", std::string(architecture_name(d.arch))));
  spec.num_classes = j.value("num_classes", d.num_classes);
  spec.in_channels = j.value("in_channels", d.in_channels);
  spec.in_height = j.value("in_height", d.in_height);
  spec.in_width = j.value("in_width", d.in_width);
  spec.mlp_hidden = j.value("mlp_hidden", d.mlp_hidden);
  spec.mlp_bias = j.value("mlp_bias", d.mlp_bias);
  spec.cnn_widths = j.value("cnn_widths", d.cnn_widths);
  spec.resnet_widths = j.value("resnet_widths", d.resnet_widths);
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
  if (spec_.in_channels == 0 || spec_.in_height == 0 || spec_.in_width == 0) {
    throw ConfigError("model: input geometry must be non-empty");
  }
  switch (spec_.arch) {
    case Architecture::kMlp: build_mlp(seed); break;
    case Architecture::kSmallCnn: build_smallcnn(seed); break;
    case Architecture::kMiniResNet: build_miniresnet(seed); break;
  }
}

Model::Conv Model::add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, bool bias, std::uint64_t seed) {
  const std::size_t layer = next_layer_++;
  Conv conv{};
  const std::size_t index = params_.size();
  conv.weight = params_.add(name + ".weight", layer, ParamRole::kWeight,
                            kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, seed, index));
  conv.bias = bias ? params_.add(name + ".bias", layer, ParamRole::kBias, Tensor::zeros({out})) : kNone;
  conv.stride = stride;
  conv.padding = kernel / 2;
  return conv;
}

Model::BatchNorm Model::add_bn(const std::string& name, std::size_t channels) {
  const std::size_t layer = next_layer_++;
  BatchNorm bn{};
  bn.gamma = params_.add(name + ".gamma", layer, ParamRole::kBnGamma, Tensor::full({channels}, 1.0f));
  bn.beta = params_.add(name + ".beta", layer, ParamRole::kBnBeta, Tensor::zeros({channels}));
  bn.mean = params_.add(name + ".running_mean", layer, ParamRole::kBnRunningMean, Tensor::zeros({channels}));
  bn.var = params_.add(name + ".running_var", layer, ParamRole::kBnRunningVar, Tensor::full({channels}, 1.0f));
  bn.ordinal = batchnorms_.size();
  batchnorms_.push_back(bn);
  return bn;
}

Model::Linear Model::add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias,
                                std::uint64_t seed) {
  const std::size_t layer = next_layer_++;
  Linear fc{};
  const std::size_t index = params_.size();
  fc.weight = params_.add(name + ".weight", layer, ParamRole::kWeight, kaiming_uniform({out, in}, in, seed, index));
  fc.bias = bias ? params_.add(name + ".bias", layer, ParamRole::kBias, Tensor::zeros({out})) : kNone;
  return fc;
}

void Model::build_mlp(std::uint64_t seed) {
  std::size_t in = spec_.in_channels * spec_.in_height * spec_.in_width;
  for (std::size_t i = 0; i < spec_.mlp_hidden.size(); ++i) {
    if (spec_.mlp_hidden[i] == 0) throw ConfigError("mlp: hidden width must be positive");
    linears_.push_back(add_linear("fc" + std::to_string(i + 1), in, spec_.mlp_hidden[i], spec_.mlp_bias, seed));
    in = spec_.mlp_hidden[i];
  }
  linears_.push_back(add_linear("fc" + std::to_string(spec_.mlp_hidden.size() + 1), in, spec_.num_classes,
                                spec_.mlp_bias, seed));
}

void Model::build_smallcnn(std::uint64_t seed) {
  if (spec_.cnn_widths.size() != 4) throw ConfigError("smallcnn: exactly four conv widths required");
  if (spec_.in_height < 4 || spec_.in_width < 4) throw ConfigError("smallcnn: input must be at least 4x4");
  std::size_t in = spec_.in_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    convs_.push_back(add_conv(name, in, spec_.cnn_widths[i], 3, 1, false, seed));
    add_bn("bn" + std::to_string(i + 1), spec_.cnn_widths[i]);
    in = spec_.cnn_widths[i];
  }
  linears_.push_back(add_linear("fc", in, spec_.num_classes, true, seed));
}

void Model::build_miniresnet(std::uint64_t seed) {
  if (spec_.resnet_widths.empty()) throw ConfigError("miniresnet: at least one stage width required");
  const std::size_t stem = spec_.resnet_widths.front();
  convs_.push_back(add_conv("stem.conv", spec_.in_channels, stem, 3, 1, false, seed));
  add_bn("stem.bn", stem);
  std::size_t in = stem;
  for (std::size_t s = 0; s < spec_.resnet_widths.size(); ++s) {
    const std::size_t out = spec_.resnet_widths[s];
    const std::size_t stride = s == 0 ? 1 : 2;
    const std::string name = "stage" + std::to_string(s + 1);
    Block b{};
    b.conv1 = add_conv(name + ".conv1", in, out, 3, stride, false, seed);
    b.bn1 = add_bn(name + ".bn1", out);
    b.conv2 = add_conv(name + ".conv2", out, out, 3, 1, false, seed);
    b.bn2 = add_bn(name + ".bn2", out);
    b.projection = stride != 1 || in != out;
    if (b.projection) {
      b.short_conv = add_conv(name + ".shortcut.conv", in, out, 1, stride, false, seed);
      b.short_bn = add_bn(name + ".shortcut.bn", out);
    }
    blocks_.push_back(b);
    in = out;
  }
  linears_.push_back(add_linear("fc", in, spec_.num_classes, true, seed));
}

Tensor Model::run_conv(Tape& tape, const Conv& conv, const Tensor& x) {
  const Tensor bias = conv.bias == kNone ? Tensor{} : params_[conv.bias].tensor;
  return ops::conv2d(tape, x, params_[conv.weight].tensor, bias, {conv.stride, conv.padding});
}

Tensor Model::run_bn(Tape& tape, const BatchNorm& bn, const Tensor& x, ForwardMode mode) {
  ops::BatchNormState state{params_[bn.mean].tensor, params_[bn.var].tensor};
  if (observers_ && mode == ForwardMode::kCalibrate) state.observer = &observers_->at(bn.ordinal);
  return ops::batchnorm2d(tape, x, params_[bn.gamma].tensor, params_[bn.beta].tensor, state, bn_mode(mode));
}

Tensor Model::run_linear(Tape& tape, const Linear& fc, const Tensor& x) {
  const Tensor bias = fc.bias == kNone ? Tensor{} : params_[fc.bias].tensor;
  return ops::linear(tape, x, params_[fc.weight].tensor, bias);
}

Tensor Model::forward(Tape& tape, const Tensor& input, ForwardMode mode) {
  const Shape expected{spec_.in_channels, spec_.in_height, spec_.in_width};
  if (input.rank() != 4 || Shape(input.shape().begin() + 1, input.shape().end()) != expected) {
    throw ShapeError("model forward: expected input [n x " + shape_str(expected).substr(1) + ", got " +
                     shape_str(input.shape()));
  }
  if (observers_ && observers_->size() != batchnorms_.size()) {
    throw ConfigError("model forward: observer count does not match batch-norm layers");
  }
  switch (spec_.arch) {
    case Architecture::kMlp: {
      Tensor h = ops::flatten(tape, input);
      for (std::size_t i = 0; i < linears_.size(); ++i) {
        h = run_linear(tape, linears_[i], h);
        if (i + 1 < linears_.size()) h = ops::relu(tape, h);
      }
      return h;
    }
    case Architecture::kSmallCnn: {
      Tensor h = input;
      for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = ops::relu(tape, run_bn(tape, batchnorms_[i], run_conv(tape, convs_[i], h), mode));
        if (i == 0 || i == 2) h = ops::maxpool2d(tape, h, 2);
      }
      return run_linear(tape, linears_.front(), ops::global_avgpool(tape, h));
    }
    case Architecture::kMiniResNet: {
      Tensor h = ops::relu(tape, run_bn(tape, batchnorms_[0], run_conv(tape, convs_[0], input), mode));
      for (const Block& b : blocks_) {
        Tensor branch = ops::relu(tape, run_bn(tape, b.bn1, run_conv(tape, b.conv1, h), mode));
        branch = run_bn(tape, b.bn2, run_conv(tape, b.conv2, branch), mode);
        const Tensor skip = b.projection ? run_bn(tape, b.short_bn, run_conv(tape, b.short_conv, h), mode) : h;
        h = ops::relu(tape, ops::add(tape, branch, skip));
      }
      return run_linear(tape, linears_.front(), ops::global_avgpool(tape, h));
    }
  }
  throw ConfigError("model forward: unknown architecture");
}

void Model::set_observers(std::vector<ops::BatchNormObserver>* observers) { observers_ = observers; }

std::vector<std::pair<std::size_t, std::size_t>> Model::running_stat_entries() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& bn : batchnorms_) out.emplace_back(bn.mean, bn.var);
  return out;
}

Model Model::clone() const {
  Model copy;
  copy.spec_ = spec_;
  copy.params_ = params_.clone();
  copy.next_layer_ = next_layer_;
  copy.linears_ = linears_;
  copy.convs_ = convs_;
  copy.batchnorms_ = batchnorms_;
  copy.blocks_ = blocks_;
  return copy;
}

std::size_t correct_count(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("accuracy: label count does not match logits");
  std::size_t correct = 0;
  const auto z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (z[i * k + j] > z[i * k + best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.dim(0) == 0) return 0.0;
  return static_cast<double>(correct_count(logits, labels)) / static_cast<double>(logits.dim(0));
}

}  // namespace sharpnoise
