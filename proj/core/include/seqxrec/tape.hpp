#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "seqxrec/tensor.hpp"

namespace SEQXREC_NS::num {

// Ordered record of primitive operations. Ops append an entry when at least
// one input requires a gradient and the tape is recording; backward() walks
// the entries in exact reverse order. A tape is confined to one thread;
// independent tapes share no mutable state.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return entries_.size(); }

  // True when an op over these inputs must be recorded.
  bool wants_grad(std::initializer_list<const Tensor*> inputs) const;
  bool wants_grad(const std::vector<Tensor>& inputs) const;

  // Output tensor for an op; marked as tape-produced when `tracked`.
  Tensor output(Shape shape, bool tracked) const;
  Tensor output(Shape shape, std::vector<Real> values, bool tracked) const;

  // `backward` reads the output's gradient through grad_of(out) and adds
  // into grad_of(input) for inputs that require gradients.
  void record(const Tensor& out, std::vector<Tensor> inputs, std::function<void()> backward);
  // Multi-output form; runs when any output has a gradient.
  void record(const std::vector<Tensor>& outs, std::vector<Tensor> inputs, std::function<void()> backward);

  // Populates the grad of every leaf that requires one. Leaf gradients are
  // accumulated into a per-pass buffer and added once at the end, so two
  // passes without zero_grads() yield exactly twice the single-pass value.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode> out;
    std::vector<std::shared_ptr<TensorNode>> more;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void()> backward;
  };

  Mode mode_;
  std::vector<Entry> entries_;
};

// Scratch gradient of a node inside a backward pass (zero-filled on first use).
std::span<Real> grad_of(TensorNode* node);

}  // namespace SEQXREC_NS::num
