#include "seqxrec/nn.hpp"

#include <cmath>

namespace SEQXREC_NS::nn {

using namespace num;

Tensor normal_init(Shape shape, double std, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = static_cast<Real>(rng.normal() * std);
  return t;
}

LayerNorm LayerNorm::init(std::size_t d) { return {Tensor::full({d}, 1, true), Tensor::zeros({d}, true)}; }

Tensor LayerNorm::operator()(Tape& tape, const Tensor& x) const { return layer_norm(tape, x, gain, bias); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool bias) {
  Linear l;
  l.w = normal_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (bias) l.b = Tensor::zeros({out}, true);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool bias) {
  Linear l;
  l.w = Tensor::zeros({in, out}, true);
  if (bias) l.b = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::operator()(Tape& tape, const Tensor& x) const {
  Tensor y = matmul(tape, x, w);
  return b.defined() ? add_row(tape, y, b) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w", w});
  if (b.defined()) out.push_back({prefix + ".b", b});
}

BlockParams BlockParams::init(std::size_t d, std::size_t hidden, Rng& rng) {
  BlockParams p;
  p.ln1 = LayerNorm::init(d);
  p.ln2 = LayerNorm::init(d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  p.wq = normal_init({d, d}, sd, rng);
  p.wk = normal_init({d, d}, sd, rng);
  p.wv = normal_init({d, d}, sd, rng);
  p.wo = normal_init({d, d}, sd, rng);
  p.ff1 = normal_init({d, hidden}, sd, rng);
  p.ff1_b = Tensor::zeros({hidden}, true);
  p.ff2 = normal_init({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  p.ff2_b = Tensor::zeros({d}, true);
  return p;
}

void BlockParams::collect(ParamList& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".wo", wo});
  ln2.collect(out, prefix + ".ln2");
  out.push_back({prefix + ".ff1", ff1});
  out.push_back({prefix + ".ff1_b", ff1_b});
  out.push_back({prefix + ".ff2", ff2});
  out.push_back({prefix + ".ff2_b", ff2_b});
}

const Tensor& BlockParams::weight(std::string_view name) const {
  if (name == "wq") return wq;
  if (name == "wk") return wk;
  if (name == "wv") return wv;
  if (name == "wo") return wo;
  if (name == "ff1") return ff1;
  if (name == "ff2") return ff2;
  throw DomainError("unknown block weight '" + std::string(name) + "'");
}

Tensor& BlockDeltas::operator[](std::string_view name) {
  if (name == "wq") return wq;
  if (name == "wk") return wk;
  if (name == "wv") return wv;
  if (name == "wo") return wo;
  if (name == "ff1") return ff1;
  if (name == "ff2") return ff2;
  throw DomainError("unknown block weight '" + std::string(name) + "'");
}

const Tensor& BlockDeltas::operator[](std::string_view name) const {
  return const_cast<BlockDeltas&>(*this)[name];
}

namespace {

Tensor effective(Tape& tape, const Tensor& w, const BlockDeltas* deltas, std::string_view name) {
  if (deltas == nullptr) return w;
  const Tensor& d = (*deltas)[name];
  if (!d.defined()) return w;
  if (d.shape() != w.shape())
    throw ShapeError("delta " + std::string(name) + " has shape " + shape_string(d.shape()) + ", weight has " +
                     shape_string(w.shape()));
  return add(tape, w, d);
}

Tensor maybe_dropout(Tape& tape, const Tensor& x, const BlockOptions& opt) {
  if (!opt.training || opt.dropout <= 0) return x;
  if (opt.rng == nullptr) throw DomainError("block_forward: dropout in training mode needs an rng");
  return dropout(tape, x, opt.dropout, *opt.rng, true);
}

}  // namespace

Tensor block_forward(Tape& tape, const BlockParams& p, const Tensor& x, const BlockOptions& opt, KVCache* cache) {
  const BlockDeltas* dl = opt.deltas;
  Tensor h = p.ln1(tape, x);
  Tensor q = matmul(tape, h, effective(tape, p.wq, dl, "wq"));
  Tensor k = matmul(tape, h, effective(tape, p.wk, dl, "wk"));
  Tensor v = matmul(tape, h, effective(tape, p.wv, dl, "wv"));
  if (opt.inject != nullptr && opt.inject->defined()) {
    q = add_row(tape, q, *opt.inject);
    k = add_row(tape, k, *opt.inject);
    v = add_row(tape, v, *opt.inject);
  }
  if (cache != nullptr) {
    if (cache->k.defined()) {
      k = concat_rows(tape, {cache->k, k});
      v = concat_rows(tape, {cache->v, v});
    }
    cache->k = k;
    cache->v = v;
  }
  Tensor a = attention(tape, q, k, v, opt.heads, opt.causal);
  a = matmul(tape, a, effective(tape, p.wo, dl, "wo"));
  Tensor r = add(tape, x, maybe_dropout(tape, a, opt));
  Tensor f = p.ln2(tape, r);
  f = gelu(tape, add_row(tape, matmul(tape, f, effective(tape, p.ff1, dl, "ff1")), p.ff1_b));
  f = add_row(tape, matmul(tape, f, effective(tape, p.ff2, dl, "ff2")), p.ff2_b);
  return add(tape, r, maybe_dropout(tape, f, opt));
}

Tensor row_dot(Tape& tape, const Tensor& a, const Tensor& b) {
  const Tensor ones = Tensor::full({a.cols(), 1}, 1);
  return reshape(tape, matmul(tape, mul(tape, a, b), ones), {a.rows()});
}

Tensor bpr_loss(Tape& tape, const Tensor& pos, const Tensor& neg) {
  return scale(tape, mean(tape, log_sigmoid(tape, sub(tape, pos, neg))), -1);
}

}  // namespace SEQXREC_NS::nn
