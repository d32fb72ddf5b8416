#include "seqxrec/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "seqxrec/rng.hpp"
#include "seqxrec/tape.hpp"

namespace SEQXREC_NS::num {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << " x ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<Real> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Real>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<Real> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() == 1) return 1;
  if (s.size() == 2) return s[0];
  throw ShapeError("expected a matrix, got " + shape_string(s));
}

std::size_t Tensor::cols() const { return node_->shape.back(); }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape()));
  return node_->data[0];
}

std::span<Real> Tensor::grad_mut() {
  if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), Real(0));
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::clone() const {
  Tensor copy(node_->shape, node_->data, node_->requires_grad);
  copy.node_->grad = node_->grad;
  return copy;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(on);
  }
}

std::uint64_t hash_parameters(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    h = fnv1a64(p.name.data(), p.name.size(), h);
    const auto values = p.tensor.values();
    h = fnv1a64(values.data(), values.size_bytes(), h);
  }
  return h;
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void append(ParamList& into, const ParamList& from) {
  into.insert(into.end(), from.begin(), from.end());
}

// ---------------------------------------------------------------------------

bool Tape::wants_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool Tape::wants_grad(const std::vector<Tensor>& inputs) const {
  if (!recording()) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

Tensor Tape::output(Shape shape, bool tracked) const {
  const std::size_t n = shape_numel(shape);
  return output(std::move(shape), std::vector<Real>(n, Real(0)), tracked);
}

Tensor Tape::output(Shape shape, std::vector<Real> values, bool tracked) const {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = tracked;
  node->from_tape = tracked;
  return Tensor(std::move(node));
}

void Tape::record(const Tensor& out, std::vector<Tensor> inputs, std::function<void()> backward) {
  Entry entry;
  entry.out = out.shared();
  entry.inputs.reserve(inputs.size());
  for (auto& t : inputs) entry.inputs.push_back(t.shared());
  entry.backward = std::move(backward);
  entries_.push_back(std::move(entry));
}

void Tape::record(const std::vector<Tensor>& outs, std::vector<Tensor> inputs, std::function<void()> backward) {
  if (outs.empty()) throw Error("record: no outputs");
  record(outs.front(), std::move(inputs), std::move(backward));
  auto& more = entries_.back().more;
  for (std::size_t i = 1; i < outs.size(); ++i) more.push_back(outs[i].shared());
}

std::span<Real> grad_of(TensorNode* node) {
  if (node->work.size() != node->data.size()) node->work.assign(node->data.size(), Real(0));
  return node->work;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  TensorNode* root = loss.node();
  const bool on_tape = std::any_of(entries_.begin(), entries_.end(),
                                   [&](const Entry& e) { return e.out.get() == root; });
  if (!on_tape) throw Error("backward: loss was not produced by this tape");

  for (auto& e : entries_) {
    e.out->work.clear();
    for (auto& m : e.more) m->work.clear();
    for (auto& in : e.inputs) in->work.clear();
  }
  grad_of(root)[0] = Real(1);

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const bool live = !it->out->work.empty() ||
                      std::any_of(it->more.begin(), it->more.end(), [](const auto& m) { return !m->work.empty(); });
    if (!live) continue;  // not on a path to the loss
    it->backward();
  }

  std::vector<TensorNode*> leaves;
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (!in->from_tape && in->requires_grad && !in->work.empty()) leaves.push_back(in.get());
    }
  }
  std::sort(leaves.begin(), leaves.end());
  leaves.erase(std::unique(leaves.begin(), leaves.end()), leaves.end());
  for (TensorNode* leaf : leaves) {
    if (leaf->grad.size() != leaf->data.size()) leaf->grad.assign(leaf->data.size(), Real(0));
    for (std::size_t i = 0; i < leaf->work.size(); ++i) leaf->grad[i] += leaf->work[i];
  }

  for (auto& e : entries_) {
    std::vector<Real>().swap(e.out->work);
    for (auto& m : e.more) std::vector<Real>().swap(m->work);
    for (auto& in : e.inputs) std::vector<Real>().swap(in->work);
  }
}

}  // namespace SEQXREC_NS::num
