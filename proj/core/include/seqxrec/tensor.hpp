#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqxrec/common.hpp"

namespace SEQXREC_NS::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  // Accumulated gradient of a leaf; lazily allocated.
  std::vector<Real> grad;
  // Per-backward scratch; cleared when a backward pass completes.
  std::vector<Real> work;
  bool requires_grad = false;
  bool from_tape = false;
};

// Dense row-major array. A Tensor is a handle: copies share storage, and
// clone() makes an independent deep copy. Rank-1 tensors act as row vectors
// wherever an op expects a matrix.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor vector(std::vector<Real> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  // Matrix view: rank-1 is 1 x n, rank-2 is shape[0] x shape[1].
  std::size_t rows() const;
  std::size_t cols() const;

  Real* data() { return node_->data.data(); }
  const Real* data() const { return node_->data.data(); }
  std::span<Real> values() { return node_->data; }
  std::span<const Real> values() const { return node_->data; }
  Real at(std::size_t i) const { return node_->data[i]; }
  Real at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  Real& at(std::size_t i) { return node_->data[i]; }
  Real& at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> grad_mut();
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  friend class Tape;
  std::shared_ptr<TensorNode> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered, named view over a model's parameters. Order is part of the
// checkpoint and hashing contracts.
using ParamList = std::vector<NamedTensor>;

void zero_grads(const ParamList& params);
void set_requires_grad(const ParamList& params, bool on);
// FNV-1a over the raw parameter bytes, in list order.
std::uint64_t hash_parameters(const ParamList& params);
std::size_t count_parameters(const ParamList& params);
void append(ParamList& into, const ParamList& from);

}  // namespace SEQXREC_NS::num
