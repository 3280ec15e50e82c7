#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sharpnoise {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  // Empty until a backward pass (or zero_grad) populates it.
  std::vector<float> grad;
  bool requires_grad = false;
};

// Shared handle to a dense float32 array. Copying a Tensor aliases the same
// storage; clone() makes an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<float> data() { return node_->data; }
  std::span<const float> data() const { return node_->data; }
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<float> grad() { return node_->grad; }
  std::span<const float> grad() const { return node_->grad; }
  // Allocates the gradient buffer if needed and fills it with zeros.
  void zero_grad();
  void drop_grad() { node_->grad.clear(); }
  void accumulate_grad(std::span<const float> delta);

  // Deep copy of shape and values; the copy does not carry the gradient.
  Tensor clone() const;
  Tensor reshaped(Shape shape) const;

  TensorNode* node() const noexcept { return node_.get(); }
  const std::shared_ptr<TensorNode>& handle() const noexcept { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of the primitive ops executed during one forward pass.
// Entries are replayed in reverse insertion order, which is a valid
// topological order because every op is recorded after its inputs exist.
class Tape {
 public:
  using Backward = std::function<void()>;

  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }

  // True when the tape is recording and any input requires a gradient.
  bool wants(std::initializer_list<const Tensor*> inputs) const;

  void record(const Tensor& output, Backward backward);

  // Seeds d(loss)/d(loss) = 1 and replays every entry in reverse. Grads of
  // recorded intermediates are reset first; leaf grads accumulate.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode> output;
    Backward backward;
  };
  std::vector<Entry> entries_;
  bool recording_ = true;
};

void backward(Tape& tape, const Tensor& loss);

// Disables recording for its lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool previous_;
};

}  // namespace sharpnoise
