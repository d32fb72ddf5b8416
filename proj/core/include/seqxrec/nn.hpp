#pragma once

#include <string>
#include <string_view>

#include "seqxrec/ops.hpp"

// Layers shared by the recommender, the adapters and the language model.
namespace SEQXREC_NS::nn {

using num::ParamList;
using num::Shape;
using num::Tape;
using num::Tensor;

// Normal(0, std) entries.
Tensor normal_init(Shape shape, double std, Rng& rng);

struct LayerNorm {
  Tensor gain, bias;

  static LayerNorm init(std::size_t d);
  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// y = x w + b with w stored [in x out]; b may be undefined.
struct Linear {
  Tensor w, b;

  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  static Linear zeros(std::size_t in, std::size_t out, bool bias = true);
  Tensor operator()(Tape& tape, const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Pre-LN transformer block: x + W_O attn(LN1(x)), then + FFN(LN2(.)) with a
// GELU hidden layer. Attention projections carry no bias.
struct BlockParams {
  LayerNorm ln1, ln2;
  Tensor wq, wk, wv, wo;
  Tensor ff1, ff1_b, ff2, ff2_b;

  static BlockParams init(std::size_t d, std::size_t hidden, Rng& rng);
  std::size_t dim() const { return wq.rows(); }
  void collect(ParamList& out, const std::string& prefix) const;
  // Weight matrix addressed by a delta name (wq, wk, wv, wo, ff1, ff2).
  const Tensor& weight(std::string_view name) const;
};

inline constexpr std::string_view kDeltaNames[] = {"wq", "wk", "wv", "wo", "ff1", "ff2"};

// Additive weight deltas for one block; undefined members mean no delta.
struct BlockDeltas {
  Tensor wq, wk, wv, wo, ff1, ff2;

  Tensor& operator[](std::string_view name);
  const Tensor& operator[](std::string_view name) const;
};

// Keys and values of earlier positions, for incremental decoding.
struct KVCache {
  Tensor k, v;
  std::size_t length() const { return k.defined() ? k.rows() : 0; }
};

struct BlockOptions {
  std::size_t heads = 1;
  bool causal = false;
  Real dropout = 0;
  Rng* rng = nullptr;
  bool training = false;
  const BlockDeltas* deltas = nullptr;
  // Row vector broadcast-added to Q, K and V before the head split.
  const Tensor* inject = nullptr;
};

Tensor block_forward(Tape& tape, const BlockParams& p, const Tensor& x, const BlockOptions& opt,
                     KVCache* cache = nullptr);

// Row-wise dot products of a[n x d] and b[n x d] -> [n].
Tensor row_dot(Tape& tape, const Tensor& a, const Tensor& b);

// Mean over entries of -log sigmoid(pos - neg).
Tensor bpr_loss(Tape& tape, const Tensor& pos, const Tensor& neg);

}  // namespace SEQXREC_NS::nn
