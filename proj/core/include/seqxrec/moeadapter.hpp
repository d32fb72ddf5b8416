#pragma once

#include <vector>

#include "seqxrec/nn.hpp"

namespace SEQXREC_NS::moe {

using num::ParamList;
using num::Tape;
using num::Tensor;

struct MoEConfig {
  std::size_t d = 64;
  std::size_t d_out = 128;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t experts = 8;
  std::size_t max_len = 50;
  Real dropout = Real(0.2);
  // Replaces positional embedding and encoder with the identity (ablation).
  bool fusion_identity = false;
};

struct Expert {
  nn::Linear hidden;  // d -> 4d
  nn::Linear out;     // 4d -> d_out
};

class MoEAdapter {
 public:
  MoEConfig config;
  nn::LayerNorm pre_ln;
  Tensor pos_emb;  // [max_len x d]
  std::vector<nn::BlockParams> encoder;
  nn::Linear gate;  // d -> experts
  std::vector<Expert> experts;

  static MoEAdapter init(const MoEConfig& config, Rng& rng);
  // <prefix>.pre_ln.*, <prefix>.pos_emb, <prefix>.encoder{l}.*, <prefix>.gate.*,
  // <prefix>.expert{i}.*
  ParamList parameters(const std::string& prefix) const;
};

// Per-row layer norm, learned positions, then a bidirectional encoder.
// `rng` is only used (and required) when training with dropout.
Tensor fuse(Tape& tape, const MoEAdapter& a, const Tensor& seq, Rng* rng = nullptr, bool training = false);
// Softmax of the gate's linear map -> [experts].
Tensor gate(Tape& tape, const MoEAdapter& a, const Tensor& h);
Tensor expert_output(Tape& tape, const MoEAdapter& a, std::size_t i, const Tensor& h, Rng* rng = nullptr,
                     bool training = false);
// Gate-weighted sum of expert outputs -> [d_out].
Tensor adapt(Tape& tape, const MoEAdapter& a, const Tensor& h, Rng* rng = nullptr, bool training = false);
// adapt(mean_pool(fuse(seq))).
Tensor forward(Tape& tape, const MoEAdapter& a, const Tensor& seq, Rng* rng = nullptr, bool training = false);

}  // namespace SEQXREC_NS::moe
