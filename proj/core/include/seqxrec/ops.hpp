#pragma once

#include <optional>
#include <vector>

#include "seqxrec/rng.hpp"
#include "seqxrec/tape.hpp"

// Differentiable primitives. Every op takes the tape first; on an inference
// tape (or when no input requires a gradient) nothing is recorded.
namespace SEQXREC_NS::num {

// a[m x k] * b[k x n]. A rank-1 `a` is treated as 1 x k and yields rank-1.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T.
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, Real factor);
// x[n x d] + row[d], broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& row);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

Tensor gelu(Tape& tape, const Tensor& x);
Tensor log_sigmoid(Tape& tape, const Tensor& x);

// Max-subtracted softmax along `axis`.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);

// Normalizes each row of x[n x d]; gain and bias have d entries.
// Uses 1/sqrt(var + eps), so constant rows map to the bias.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps = Real(1e-5));

// Arithmetic mean over the (unmasked) rows of x[n x d] -> [d].
Tensor mean_pool(Tape& tape, const Tensor& x, const std::vector<bool>* mask = nullptr);

// Rows of table[V x d] selected by ids -> [n x d].
Tensor embedding(Tape& tape, const Tensor& table, const std::vector<std::size_t>& ids);

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);
// All entries of every part, in order -> rank 1.
Tensor concat_flat(Tape& tape, const std::vector<Tensor>& parts);
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count);
// Contiguous range [offset, offset + numel(shape)) of x, reshaped.
Tensor slice_flat(Tape& tape, const Tensor& x, std::size_t offset, Shape shape);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
// factor * (x w + b) for x [B x k], w [k x N], split per row into consecutive
// parts whose sizes sum to N. Result is indexed [row][part]; b may be undefined.
std::vector<std::vector<Tensor>> linear_split(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
                                              const std::vector<Shape>& parts, Real factor);

// Multi-head scaled dot-product attention. q is [n x d], k and v are [m x d];
// d splits into `heads` equal slices, scores scale by 1/sqrt(d / heads).
// With `causal`, query i sits at absolute position i + (m - n) and only
// attends to keys at positions <= its own.
Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, bool causal);

// Mean negative log-likelihood of `targets` under row-wise softmax of
// logits[T x V]. Rows whose target is negative are ignored.
Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<long>& targets);

// Inverted dropout; the identity (same handle) when !training or p == 0.
Tensor dropout(Tape& tape, const Tensor& x, Real p, Rng& rng, bool training);

}  // namespace SEQXREC_NS::num
