#include "seqxrec/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace SEQXREC_NS::num {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Real* p, std::size_t r, std::size_t c) {
  return MatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMatMap as_mat(const Real* p, std::size_t r, std::size_t c) {
  return ConstMatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 1 && t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_string(t.shape()));
  }
}

Shape matmul_shape(const Tensor& a, std::size_t n) {
  if (a.rank() == 1) return {n};
  return {a.rows(), n};
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  if (b.rank() != 2) throw ShapeError("matmul: right operand must be a matrix, got " + shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const bool tracked = tape.wants_grad({&a, &b});
  Tensor out = tape.output(matmul_shape(a, n), tracked);
  as_mat(out.data(), m, n).noalias() = as_mat(a.data(), m, k) * as_mat(b.data(), k, n);
  if (tracked) {
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    TensorNode* on = out.node();
    tape.record(out, {a, b}, [=] {
      auto dout = as_mat(grad_of(on).data(), m, n);
      if (an->requires_grad)
        as_mat(grad_of(an).data(), m, k).noalias() += dout * as_mat(bn->data.data(), k, n).transpose();
      if (bn->requires_grad)
        as_mat(grad_of(bn).data(), k, n).noalias() += as_mat(an->data.data(), m, k).transpose() * dout;
    });
  }
  return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  const bool tracked = tape.wants_grad({&a, &b});
  Tensor out = tape.output(matmul_shape(a, n), tracked);
  as_mat(out.data(), m, n).noalias() = as_mat(a.data(), m, k) * as_mat(b.data(), n, k).transpose();
  if (tracked) {
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    TensorNode* on = out.node();
    tape.record(out, {a, b}, [=] {
      auto dout = as_mat(grad_of(on).data(), m, n);
      if (an->requires_grad)
        as_mat(grad_of(an).data(), m, k).noalias() += dout * as_mat(bn->data.data(), n, k);
      if (bn->requires_grad)
        as_mat(grad_of(bn).data(), n, k).noalias() += dout.transpose() * as_mat(an->data.data(), m, k);
    });
  }
  return out;
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor binary_elementwise(Tape& tape, const char* name, const Tensor& a, const Tensor& b,
                          Forward fwd, GradA ga, GradB gb) {
  require_same_shape(name, a, b);
  const bool tracked = tape.wants_grad({&a, &b});
  Tensor out = tape.output(a.shape(), tracked);
  const std::size_t n = a.numel();
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  if (tracked) {
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    TensorNode* on = out.node();
    tape.record(out, {a, b}, [=] {
      const Real* g = grad_of(on).data();
      if (an->requires_grad) {
        Real* d = grad_of(an).data();
        for (std::size_t i = 0; i < n; ++i) d[i] += ga(g[i], an->data[i], bn->data[i]);
      }
      if (bn->requires_grad) {
        Real* d = grad_of(bn).data();
        for (std::size_t i = 0; i < n; ++i) d[i] += gb(g[i], an->data[i], bn->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, "add", a, b, [](Real x, Real y) { return x + y; },
      [](Real g, Real, Real) { return g; }, [](Real g, Real, Real) { return g; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, "sub", a, b, [](Real x, Real y) { return x - y; },
      [](Real g, Real, Real) { return g; }, [](Real g, Real, Real) { return -g; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, "mul", a, b, [](Real x, Real y) { return x * y; },
      [](Real g, Real, Real y) { return g * y; }, [](Real g, Real x, Real) { return g * x; });
}

Tensor scale(Tape& tape, const Tensor& a, Real factor) {
  const bool tracked = tape.wants_grad({&a});
  Tensor out = tape.output(a.shape(), tracked);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (tracked) {
    TensorNode* an = a.node();
    TensorNode* on = out.node();
    tape.record(out, {a}, [=] {
      const Real* g = grad_of(on).data();
      Real* d = grad_of(an).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& row) {
  require_matrix("add_row", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (row.numel() != c) {
    throw ShapeError("add_row: row of " + shape_string(row.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  const bool tracked = tape.wants_grad({&x, &row});
  Tensor out = tape.output(x.shape(), tracked);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + row.data()[j];
  }
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* rn = row.node();
    TensorNode* on = out.node();
    tape.record(out, {x, row}, [=] {
      const Real* g = grad_of(on).data();
      if (xn->requires_grad) {
        Real* d = grad_of(xn).data();
        for (std::size_t i = 0; i < r * c; ++i) d[i] += g[i];
      }
      if (rn->requires_grad) {
        Real* d = grad_of(rn).data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) d[j] += g[i * c + j];
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  const bool tracked = tape.wants_grad({&x});
  Real total = 0;
  for (Real v : x.values()) total += v;
  Tensor out = tape.output({1}, {total}, tracked);
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=] {
      const Real g = grad_of(on)[0];
      for (Real& d : grad_of(xn)) d += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  const bool tracked = tape.wants_grad({&x});
  Real total = 0;
  for (Real v : x.values()) total += v;
  const Real inv = Real(1) / static_cast<Real>(x.numel());
  Tensor out = tape.output({1}, {total * inv}, tracked);
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=] {
      const Real g = grad_of(on)[0] * inv;
      for (Real& d : grad_of(xn)) d += g;
    });
  }
  return out;
}

namespace {

constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2 / pi)
constexpr Real kGeluA = Real(0.044715);

}  // namespace

Tensor gelu(Tape& tape, const Tensor& x) {
  const bool tracked = tape.wants_grad({&x});
  Tensor out = tape.output(x.shape(), tracked);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const Real v = x.data()[i];
    const Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    out.data()[i] = Real(0.5) * v * (Real(1) + t);
  }
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=] {
      const Real* g = grad_of(on).data();
      Real* d = grad_of(xn).data();
      for (std::size_t i = 0; i < n; ++i) {
        const Real v = xn->data[i];
        const Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const Real dt = (Real(1) - t * t) * kGeluC * (Real(1) + Real(3) * kGeluA * v * v);
        d[i] += g[i] * (Real(0.5) * (Real(1) + t) + Real(0.5) * v * dt);
      }
    });
  }
  return out;
}

Tensor log_sigmoid(Tape& tape, const Tensor& x) {
  const bool tracked = tape.wants_grad({&x});
  Tensor out = tape.output(x.shape(), tracked);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const Real v = x.data()[i];
    out.data()[i] = std::min(v, Real(0)) - std::log1p(std::exp(-std::abs(v)));
  }
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=] {
      const Real* g = grad_of(on).data();
      Real* d = grad_of(xn).data();
      for (std::size_t i = 0; i < n; ++i) {
        const Real v = xn->data[i];
        // d/dv log(sigmoid(v)) = sigmoid(-v)
        const Real s = v >= 0 ? std::exp(-v) / (Real(1) + std::exp(-v)) : Real(1) / (Real(1) + std::exp(v));
        d[i] += g[i] * s;
      }
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];

  const bool tracked = tape.wants_grad({&x});
  Tensor out = tape.output(s, tracked);
  const Real* px = x.data();
  Real* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
      Real total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const Real e = std::exp(px[base + j * inner] - mx);
        po[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) po[base + j * inner] /= total;
    }
  }
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=] {
      const Real* g = grad_of(on).data();
      const Real* y = on->data.data();
      Real* d = grad_of(xn).data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          Real dot = 0;
          for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            d[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  require_matrix("layer_norm", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                     shape_string(bias.shape()) + " do not match feature extent " + std::to_string(c));
  }
  const bool tracked = tape.wants_grad({&x, &gain, &bias});
  Tensor out = tape.output(x.shape(), tracked);
  std::vector<Real> xhat(r * c);
  std::vector<Real> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = x.data() + i * c;
    Real mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(c);
    const Real inv = Real(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const Real h = (row[j] - mu) * inv;
      xhat[i * c + j] = h;
      out.data()[i * c + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* gn = gain.node();
    TensorNode* bn = bias.node();
    TensorNode* on = out.node();
    tape.record(out, {x, gain, bias}, [=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const Real* g = grad_of(on).data();
      if (gn->requires_grad) {
        Real* dg = grad_of(gn).data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * xhat[i * c + j];
      }
      if (bn->requires_grad) {
        Real* db = grad_of(bn).data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
      }
      if (xn->requires_grad) {
        Real* dx = grad_of(xn).data();
        const Real inv_c = Real(1) / static_cast<Real>(c);
        for (std::size_t i = 0; i < r; ++i) {
          Real mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const Real dh = g[i * c + j] * gn->data[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[i * c + j];
          }
          mean_dh *= inv_c;
          mean_dh_h *= inv_c;
          for (std::size_t j = 0; j < c; ++j) {
            const Real dh = g[i * c + j] * gn->data[j];
            dx[i * c + j] += inv_std[i] * (dh - mean_dh - xhat[i * c + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

Tensor mean_pool(Tape& tape, const Tensor& x, const std::vector<bool>* mask) {
  require_matrix("mean_pool", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (mask && mask->size() != r) {
    throw ShapeError("mean_pool: mask of length " + std::to_string(mask->size()) + " for " +
                     std::to_string(r) + " positions");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < r; ++i) {
    if (!mask || (*mask)[i]) kept.push_back(i);
  }
  if (kept.empty()) throw DomainError("mean_pool: every position is masked");

  const bool tracked = tape.wants_grad({&x});
  Tensor out = tape.output({c}, tracked);
  for (std::size_t i : kept)
    for (std::size_t j = 0; j < c; ++j) out.data()[j] += x.data()[i * c + j];
  const Real inv = Real(1) / static_cast<Real>(kept.size());
  for (std::size_t j = 0; j < c; ++j) out.data()[j] *= inv;
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=, kept = std::move(kept)] {
      const Real* g = grad_of(on).data();
      Real* d = grad_of(xn).data();
      for (std::size_t i : kept)
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j] * inv;
    });
  }
  return out;
}

Tensor embedding(Tape& tape, const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be a matrix");
  const std::size_t vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw DomainError("embedding: id " + std::to_string(id) + " out of range for table of " +
                        std::to_string(vocab) + " rows");
    }
  }
  const bool tracked = tape.wants_grad({&table});
  Tensor out = tape.output({ids.size(), d}, tracked);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data() + ids[i] * d, d, out.data() + i * d);
  if (tracked) {
    TensorNode* tn = table.node();
    TensorNode* on = out.node();
    tape.record(out, {table}, [=] {
      const Real* g = grad_of(on).data();
      Real* dt = grad_of(tn).data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) dt[ids[i] * d + j] += g[i * d + j];
    });
  }
  return out;
}

namespace {

Tensor concat_impl(Tape& tape, const std::vector<Tensor>& parts, Shape shape) {
  const bool tracked = tape.wants_grad(parts);
  Tensor out = tape.output(std::move(shape), tracked);
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(at);
    std::copy_n(p.data(), p.numel(), out.data() + at);
    at += p.numel();
  }
  if (tracked) {
    std::vector<TensorNode*> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    TensorNode* on = out.node();
    tape.record(out, parts, [=, offsets = std::move(offsets), nodes = std::move(nodes)] {
      const Real* g = grad_of(on).data();
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        Real* d = grad_of(nodes[k]).data();
        const std::size_t n = nodes[k]->data.size();
        for (std::size_t i = 0; i < n; ++i) d[i] += g[offsets[k] + i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_matrix("concat_rows", p);
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    total += p.rows();
  }
  return concat_impl(tape, parts, {total, c});
}

Tensor concat_flat(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_flat: nothing to concatenate");
  std::size_t total = 0;
  for (const Tensor& p : parts) total += p.numel();
  return concat_impl(tape, parts, {total});
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix("slice_rows", x);
  if (count == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t c = x.cols();
  return slice_flat(tape, x, begin * c, {count, c});
}

Tensor slice_flat(Tape& tape, const Tensor& x, std::size_t offset, Shape shape) {
  const std::size_t n = shape_numel(shape);
  if (offset + n > x.numel()) {
    throw ShapeError("slice_flat: range [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                     ") exceeds " + shape_string(x.shape()));
  }
  const bool tracked = tape.wants_grad({&x});
  std::vector<Real> values(x.data() + offset, x.data() + offset + n);
  Tensor out = tape.output(std::move(shape), std::move(values), tracked);
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=] {
      const Real* g = grad_of(on).data();
      Real* d = grad_of(xn).data() + offset;
      for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  return slice_flat(tape, x, 0, std::move(shape));
}

std::vector<std::vector<Tensor>> linear_split(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
                                              const std::vector<Shape>& parts, Real factor) {
  require_matrix("linear_split", x);
  require_matrix("linear_split", w);
  const std::size_t B = x.rows(), k = x.cols(), N = w.cols();
  if (w.rows() != k)
    throw ShapeError("linear_split: " + shape_string(x.shape()) + " x " + shape_string(w.shape()) + " is inconsistent");
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != N)
    throw ShapeError("linear_split: bias " + shape_string(b.shape()) + " does not match " + shape_string(w.shape()));
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& s : parts) {
    offsets.push_back(total);
    total += shape_numel(s);
  }
  if (total != N)
    throw ShapeError("linear_split: parts cover " + std::to_string(total) + " of " + std::to_string(N) + " columns");

  const bool tracked = has_bias ? tape.wants_grad({&x, &w, &b}) : tape.wants_grad({&x, &w});
  // Rows are processed in chunks so the dense intermediate stays small.
  const std::size_t chunk = std::max<std::size_t>(1, (std::size_t{1} << 21) / N);
  RowMat y(std::min(chunk, B), N);
  const Real* bias = has_bias ? b.data() : nullptr;
  std::vector<std::vector<Tensor>> out(B);
  std::vector<Tensor> flat;
  for (std::size_t r = 0; r < B; ++r) {
    if (r % chunk == 0) {
      const std::size_t rows = std::min(chunk, B - r);
      y.topRows(rows).noalias() = factor * (as_mat(x.data() + r * k, rows, k) * as_mat(w.data(), k, N));
    }
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t n = shape_numel(parts[p]);
      const Real* src = y.data() + (r % chunk) * N + offsets[p];
      std::vector<Real> values(src, src + n);
      if (bias != nullptr)
        for (std::size_t j = 0; j < n; ++j) values[j] += factor * bias[offsets[p] + j];
      out[r].push_back(tape.output(parts[p], std::move(values), tracked));
      if (tracked) flat.push_back(out[r].back());
    }
  }
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* wn = w.node();
    TensorNode* bn = has_bias ? b.node() : nullptr;
    std::vector<TensorNode*> outs;
    for (const auto& t : flat) outs.push_back(t.node());
    const std::size_t P = parts.size();
    std::vector<Tensor> inputs = {x, w};
    if (has_bias) inputs.push_back(b);
    tape.record(flat, std::move(inputs), [=] {
      RowMat g(std::min(chunk, B), N);
      for (std::size_t r0 = 0; r0 < B; r0 += chunk) {
        const std::size_t rows = std::min(chunk, B - r0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t p = 0; p < P; ++p) {
            TensorNode* on = outs[(r0 + r) * P + p];
            Real* dst = g.data() + r * N + offsets[p];
            if (on->work.empty())
              std::fill(dst, dst + on->data.size(), Real(0));
            else
              std::copy(on->work.begin(), on->work.end(), dst);
          }
        }
        auto gc = g.topRows(rows);
        if (xn->requires_grad)
          as_mat(grad_of(xn).data() + r0 * k, rows, k).noalias() +=
              factor * (gc * as_mat(wn->data.data(), k, N).transpose());
        if (wn->requires_grad)
          as_mat(grad_of(wn).data(), k, N).noalias() +=
              factor * (as_mat(xn->data.data() + r0 * k, rows, k).transpose() * gc);
        if (bn != nullptr && bn->requires_grad) {
          std::vector<Real> colsum(N, Real(0));
          for (std::size_t r = 0; r < rows; ++r) {
            const Real* row = g.data() + r * N;
            for (std::size_t j = 0; j < N; ++j) colsum[j] += row[j];
          }
          Real* d = grad_of(bn).data();
          for (std::size_t j = 0; j < N; ++j) d[j] += factor * colsum[j];
        }
      }
    });
  }
  return out;
}

Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 bool causal) {
  require_matrix("attention", q);
  require_matrix("attention", k);
  require_matrix("attention", v);
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != m) {
    throw ShapeError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                     ", v " + shape_string(v.shape()) + " are inconsistent");
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  if (causal && n > m) throw ShapeError("attention: more queries than keys under a causal mask");
  const std::size_t dh = d / heads;
  const Real scale_factor = Real(1) / std::sqrt(static_cast<Real>(dh));
  const std::size_t shift = m - n;

  const bool tracked = tape.wants_grad({&q, &k, &v});
  Tensor out = tape.output(q.shape(), tracked);
  // Attention weights per head, row-major [heads][n][m].
  std::vector<Real> probs(heads * n * m, Real(0));

  auto Q = as_mat(q.data(), n, d);
  auto K = as_mat(k.data(), m, d);
  auto V = as_mat(v.data(), m, d);
  auto O = as_mat(out.data(), n, d);
  RowMat scores(n, m);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    const auto w = static_cast<Eigen::Index>(dh);
    scores.noalias() = Q.middleCols(c0, w) * K.middleCols(c0, w).transpose();
    auto P = as_mat(probs.data() + h * n * m, n, m);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t limit = causal ? i + shift + 1 : m;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, scores(i, j) * scale_factor);
      Real total = 0;
      for (std::size_t j = 0; j < limit; ++j) {
        const Real e = std::exp(scores(i, j) * scale_factor - mx);
        P(i, j) = e;
        total += e;
      }
      for (std::size_t j = 0; j < limit; ++j) P(i, j) /= total;
    }
    O.middleCols(c0, w).noalias() = P * V.middleCols(c0, w);
  }

  if (tracked) {
    TensorNode* qn = q.node();
    TensorNode* kn = k.node();
    TensorNode* vn = v.node();
    TensorNode* on = out.node();
    tape.record(out, {q, k, v}, [=, probs = std::move(probs)] {
      auto dO = as_mat(grad_of(on).data(), n, d);
      auto Qd = as_mat(qn->data.data(), n, d);
      auto Kd = as_mat(kn->data.data(), m, d);
      auto Vd = as_mat(vn->data.data(), m, d);
      RowMat dP(n, m);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h * dh);
        const auto w = static_cast<Eigen::Index>(dh);
        auto P = as_mat(probs.data() + h * n * m, n, m);
        if (vn->requires_grad)
          as_mat(grad_of(vn).data(), m, d).middleCols(c0, w).noalias() += P.transpose() * dO.middleCols(c0, w);
        if (!qn->requires_grad && !kn->requires_grad) continue;
        dP.noalias() = dO.middleCols(c0, w) * Vd.middleCols(c0, w).transpose();
        // softmax backward, folded with the score scale
        for (std::size_t i = 0; i < n; ++i) {
          Real dot = 0;
          for (std::size_t j = 0; j < m; ++j) dot += dP(i, j) * P(i, j);
          for (std::size_t j = 0; j < m; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * scale_factor;
        }
        if (qn->requires_grad)
          as_mat(grad_of(qn).data(), n, d).middleCols(c0, w).noalias() += dP * Kd.middleCols(c0, w);
        if (kn->requires_grad)
          as_mat(grad_of(kn).data(), m, d).middleCols(c0, w).noalias() += dP.transpose() * Qd.middleCols(c0, w);
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<long>& targets) {
  require_matrix("cross_entropy", logits);
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(r) + " rows");
  }
  std::size_t counted = 0;
  for (long t : targets) {
    if (t >= static_cast<long>(c)) throw DomainError("cross_entropy: target id out of range");
    if (t >= 0) ++counted;
  }
  if (counted == 0) throw DomainError("cross_entropy: no target positions");

  const bool tracked = tape.wants_grad({&logits});
  std::vector<Real> probs(r * c, Real(0));
  Real total = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0) continue;
    const Real* row = logits.data() + i * c;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const Real e = std::exp(row[j] - mx);
      probs[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += -(row[targets[i]] - mx - std::log(z));
  }
  const Real inv = Real(1) / static_cast<Real>(counted);
  Tensor out = tape.output({1}, {total * inv}, tracked);
  if (tracked) {
    TensorNode* ln = logits.node();
    TensorNode* on = out.node();
    tape.record(out, {logits}, [=, probs = std::move(probs)] {
      const Real g = grad_of(on)[0] * inv;
      Real* d = grad_of(ln).data();
      for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] < 0) continue;
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g * probs[i * c + j];
        d[i * c + static_cast<std::size_t>(targets[i])] -= g;
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, Real p, Rng& rng, bool training) {
  if (!training || p <= Real(0)) return x;
  if (p >= Real(1)) throw DomainError("dropout: rate must be below 1");
  const std::size_t n = x.numel();
  const Real keep_scale = Real(1) / (Real(1) - p);
  std::vector<Real> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() < static_cast<double>(p) ? Real(0) : keep_scale;
  const bool tracked = tape.wants_grad({&x});
  Tensor out = tape.output(x.shape(), tracked);
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * mask[i];
  if (tracked) {
    TensorNode* xn = x.node();
    TensorNode* on = out.node();
    tape.record(out, {x}, [=, mask = std::move(mask)] {
      const Real* g = grad_of(on).data();
      Real* d = grad_of(xn).data();
      for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * mask[i];
    });
  }
  return out;
}

}  // namespace SEQXREC_NS::num
