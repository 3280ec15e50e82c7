#pragma once

#include <vector>

#include "sharpnoise/tensor.hpp"

namespace sharpnoise {

struct Batch {
  Tensor images;  // [n, c, h, w]
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

}  // namespace sharpnoise
