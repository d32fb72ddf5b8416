#include "seqxrec/moeadapter.hpp"

#include <cmath>
#include <numeric>

namespace SEQXREC_NS::moe {

using namespace num;

MoEAdapter MoEAdapter::init(const MoEConfig& config, Rng& rng) {
  if (config.experts == 0) throw DomainError("MoEAdapter: at least one expert is required");
  if (config.heads == 0 || config.d % config.heads != 0) throw DomainError("MoEAdapter: heads must divide d");
  MoEAdapter a;
  a.config = config;
  a.pre_ln = nn::LayerNorm::init(config.d);
  a.pos_emb = nn::normal_init({config.max_len, config.d}, 0.02, rng);
  for (std::size_t l = 0; l < config.layers; ++l) a.encoder.push_back(nn::BlockParams::init(config.d, 4 * config.d, rng));
  a.gate = nn::Linear::init(config.d, config.experts, rng);
  for (std::size_t i = 0; i < config.experts; ++i)
    a.experts.push_back({nn::Linear::init(config.d, 4 * config.d, rng), nn::Linear::init(4 * config.d, config.d_out, rng)});
  return a;
}

ParamList MoEAdapter::parameters(const std::string& prefix) const {
  ParamList out;
  pre_ln.collect(out, prefix + ".pre_ln");
  out.push_back({prefix + ".pos_emb", pos_emb});
  for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].collect(out, prefix + ".encoder" + std::to_string(l));
  gate.collect(out, prefix + ".gate");
  for (std::size_t i = 0; i < experts.size(); ++i) {
    experts[i].hidden.collect(out, prefix + ".expert" + std::to_string(i) + ".hidden");
    experts[i].out.collect(out, prefix + ".expert" + std::to_string(i) + ".out");
  }
  return out;
}

Tensor fuse(Tape& tape, const MoEAdapter& a, const Tensor& seq, Rng* rng, bool training) {
  const auto& cfg = a.config;
  if (seq.rank() != 2 || seq.cols() != cfg.d)
    throw ShapeError("fuse: expected [n x " + std::to_string(cfg.d) + "], got " + shape_string(seq.shape()));
  const std::size_t n = seq.rows();
  Tensor x = a.pre_ln(tape, seq);
  if (cfg.fusion_identity) return x;
  if (n > cfg.max_len)
    throw DomainError("fuse: sequence of " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg.max_len));
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  x = add(tape, x, embedding(tape, a.pos_emb, positions));
  nn::BlockOptions opt;
  opt.heads = cfg.heads;
  opt.causal = false;
  opt.dropout = cfg.dropout;
  opt.rng = rng;
  opt.training = training;
  for (const auto& block : a.encoder) x = nn::block_forward(tape, block, x, opt);
  return x;
}

Tensor gate(Tape& tape, const MoEAdapter& a, const Tensor& h) { return softmax(tape, a.gate(tape, h), 0); }

Tensor expert_output(Tape& tape, const MoEAdapter& a, std::size_t i, const Tensor& h, Rng* rng, bool training) {
  const Expert& e = a.experts.at(i);
  Tensor z = gelu(tape, e.hidden(tape, h));
  if (training && a.config.dropout > 0) {
    if (rng == nullptr) throw DomainError("expert_output: dropout in training mode needs an rng");
    z = dropout(tape, z, a.config.dropout, *rng, true);
  }
  return e.out(tape, z);
}

Tensor adapt(Tape& tape, const MoEAdapter& a, const Tensor& h, Rng* rng, bool training) {
  if (h.numel() != a.config.d) throw ShapeError("adapt: expected [" + std::to_string(a.config.d) + "], got " + shape_string(h.shape()));
  Tensor weights = gate(tape, a, h);
  std::vector<Tensor> outputs;
  for (std::size_t i = 0; i < a.experts.size(); ++i) outputs.push_back(expert_output(tape, a, i, h, rng, training));
  return matmul(tape, weights, concat_rows(tape, outputs));
}

Tensor forward(Tape& tape, const MoEAdapter& a, const Tensor& seq, Rng* rng, bool training) {
  return adapt(tape, a, mean_pool(tape, fuse(tape, a, seq, rng, training)), rng, training);
}

}  // namespace SEQXREC_NS::moe
