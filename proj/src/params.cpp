#include "sharpnoise/params.hpp"

#include <algorithm>
#include <cmath>

#include "sharpnoise/error.hpp"

namespace sharpnoise {

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::kWeight: return "weight";
    case ParamRole::kBias: return "bias";
    case ParamRole::kBnGamma: return "bn_gamma";
    case ParamRole::kBnBeta: return "bn_beta";
    case ParamRole::kBnRunningMean: return "bn_running_mean";
    case ParamRole::kBnRunningVar: return "bn_running_var";
  }
  return "unknown";
}

std::size_t ParamSet::add(std::string name, std::size_t layer_id, ParamRole role, Tensor tensor) {
  if (find(name)) throw ConfigError("param set: duplicate entry name '" + name + "'");
  tensor.set_requires_grad(is_trainable(role));
  entries_.push_back({std::move(name), layer_id, role, std::move(tensor)});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

const ParamEntry& ParamSet::at(std::string_view name) const {
  const auto i = find(name);
  if (!i) throw ConfigError("param set: no entry named '" + std::string(name) + "'");
  return entries_[*i];
}

ParamEntry& ParamSet::at(std::string_view name) {
  return const_cast<ParamEntry&>(std::as_const(*this).at(name));
}

std::optional<std::size_t> ParamSet::weight_index(std::size_t layer_id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].layer_id == layer_id && entries_[i].role == ParamRole::kWeight) return i;
  return std::nullopt;
}

std::vector<std::size_t> ParamSet::weight_layers() const {
  std::vector<std::size_t> ids;
  for (const auto& e : entries_)
    if (e.role == ParamRole::kWeight) ids.push_back(e.layer_id);
  return ids;
}

std::size_t ParamSet::trainable_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return is_trainable(e.role); }));
}

void ParamSet::zero_grad() {
  for (auto& e : entries_)
    if (is_trainable(e.role)) e.tensor.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet copy;
  copy.entries_.reserve(entries_.size());
  for (const auto& e : entries_) copy.entries_.push_back({e.name, e.layer_id, e.role, e.tensor.clone()});
  return copy;
}

void ParamSet::assign_values(const ParamSet& other) {
  if (other.size() != size()) throw ConfigError("param set: assign from a set of different size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other[i].name || entries_[i].tensor.shape() != other[i].tensor.shape()) {
      throw ConfigError("param set: entry '" + entries_[i].name + "' does not match '" + other[i].name + "'");
    }
    const auto src = other[i].tensor.data();
    std::copy(src.begin(), src.end(), entries_[i].tensor.data().begin());
  }
}

LayerStats weight_stats(std::span<const float> weights) {
  LayerStats s;
  if (weights.empty()) return s;
  double sum = 0.0;
  for (const float w : weights) {
    s.w_max = std::max(s.w_max, static_cast<double>(std::fabs(w)));
    sum += w;
  }
  const double mean = sum / static_cast<double>(weights.size());
  double sq = 0.0;
  for (const float w : weights) sq += (w - mean) * (w - mean);
  s.sigma = std::sqrt(sq / static_cast<double>(weights.size()));
  return s;
}

LayerStats layer_stats(const ParamSet& params, std::size_t layer_id) {
  const auto idx = params.weight_index(layer_id);
  if (!idx) throw ConfigError("layer_stats: layer " + std::to_string(layer_id) + " has no weight entry");
  return weight_stats(params[*idx].tensor.data());
}

}  // namespace sharpnoise
