#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sharpnoise/tensor.hpp"

namespace sharpnoise {

enum class ParamRole { kWeight, kBias, kBnGamma, kBnBeta, kBnRunningMean, kBnRunningVar };

std::string_view role_name(ParamRole role);

// Running statistics are buffers, not trainable parameters.
inline bool is_trainable(ParamRole role) {
  return role != ParamRole::kBnRunningMean && role != ParamRole::kBnRunningVar;
}

struct ParamEntry {
  std::string name;
  std::size_t layer_id = 0;
  ParamRole role = ParamRole::kWeight;
  Tensor tensor;
};

struct LayerStats {
  double w_max = 0.0;
  // Population standard deviation over the layer's weight elements.
  double sigma = 0.0;
};

class ParamSet {
 public:
  // Registers a new entry and returns its index. Names must be unique.
  std::size_t add(std::string name, std::size_t layer_id, ParamRole role, Tensor tensor);

  std::size_t size() const noexcept { return entries_.size(); }
  ParamEntry& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::optional<std::size_t> find(std::string_view name) const;
  const ParamEntry& at(std::string_view name) const;
  ParamEntry& at(std::string_view name);

  // Index of the weight entry of a conv/linear layer, if any.
  std::optional<std::size_t> weight_index(std::size_t layer_id) const;
  // Layer ids owning a weight entry, in registration order.
  std::vector<std::size_t> weight_layers() const;

  std::size_t trainable_count() const;
  void zero_grad();

  // Deep copy: same names, roles and values, independent storage.
  ParamSet clone() const;
  // Overwrites every value from a structurally identical set.
  void assign_values(const ParamSet& other);

 private:
  std::vector<ParamEntry> entries_;
};

LayerStats layer_stats(const ParamSet& params, std::size_t layer_id);
LayerStats weight_stats(std::span<const float> weights);

}  // namespace sharpnoise
