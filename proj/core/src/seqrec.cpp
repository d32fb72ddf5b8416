#include "seqxrec/seqrec.hpp"

#include <cmath>
#include <numeric>

#include "seqxrec/optim.hpp"

namespace SEQXREC_NS::seqrec {

using namespace num;

SeqRecModel SeqRecModel::init(const SeqRecConfig& config, std::uint64_t seed) {
  if (config.num_items == 0) throw DomainError("SeqRecModel: num_items must be positive");
  if (config.heads == 0 || config.d % config.heads != 0)
    throw DomainError("SeqRecModel: heads must divide d (d=" + std::to_string(config.d) +
                      ", heads=" + std::to_string(config.heads) + ")");
  Rng rng = Rng(seed).derive("seqrec-init");
  SeqRecModel m;
  m.config = config;
  m.item_emb = nn::normal_init({config.num_items + 1, config.d}, 1.0 / std::sqrt(double(config.d)), rng);
  for (std::size_t j = 0; j < config.d; ++j) m.item_emb.at(0, j) = 0;
  m.pos_emb = nn::normal_init({config.max_len, config.d}, 1.0 / std::sqrt(double(config.d)), rng);
  for (std::size_t l = 0; l < config.layers; ++l) m.blocks.push_back(nn::BlockParams::init(config.d, 4 * config.d, rng));
  m.final_ln = nn::LayerNorm::init(config.d);
  return m;
}

ParamList SeqRecModel::parameters() const {
  ParamList out = {{"item_emb", item_emb}, {"pos_emb", pos_emb}};
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(out, "layer" + std::to_string(l));
  final_ln.collect(out, "final_ln");
  return out;
}

SeqRecModel SeqRecModel::clone() const {
  SeqRecModel m = *this;
  m.item_emb = item_emb.clone();
  m.pos_emb = pos_emb.clone();
  for (auto& b : m.blocks) {
    for (Tensor* t : {&b.ln1.gain, &b.ln1.bias, &b.ln2.gain, &b.ln2.bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ff1,
                      &b.ff1_b, &b.ff2, &b.ff2_b})
      *t = t->clone();
  }
  m.final_ln.gain = final_ln.gain.clone();
  m.final_ln.bias = final_ln.bias.clone();
  return m;
}

Tensor encode_sequence(Tape& tape, const SeqRecModel& model, const std::vector<std::size_t>& items,
                       const LayerDeltas* adapters) {
  const auto& cfg = model.config;
  if (items.empty() || items.size() > cfg.max_len)
    throw DomainError("encode_sequence: length " + std::to_string(items.size()) + " outside [1, " +
                      std::to_string(cfg.max_len) + "]");
  for (std::size_t id : items)
    if (id == 0 || id > cfg.num_items)
      throw DomainError("encode_sequence: item id " + std::to_string(id) + " out of range [1, " +
                        std::to_string(cfg.num_items) + "]");
  if (adapters != nullptr && !adapters->empty() && adapters->size() != model.blocks.size())
    throw ShapeError("encode_sequence: " + std::to_string(adapters->size()) + " adapter layers for " +
                     std::to_string(model.blocks.size()) + " blocks");
  const std::size_t n = items.size();
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(tape, embedding(tape, model.item_emb, items), embedding(tape, model.pos_emb, positions));
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    nn::BlockOptions opt;
    opt.heads = cfg.heads;
    opt.causal = true;
    if (adapters != nullptr && !adapters->empty()) opt.deltas = &(*adapters)[l];
    x = nn::block_forward(tape, model.blocks[l], x, opt);
  }
  return model.final_ln(tape, x);
}

Tensor user_state(Tape& tape, const SeqRecModel& model, const std::vector<std::size_t>& items,
                  const LayerDeltas* adapters) {
  Tensor h = encode_sequence(tape, model, items, adapters);
  return reshape(tape, slice_rows(tape, h, h.rows() - 1, 1), {model.config.d});
}

std::vector<Real> score_items(const SeqRecModel& model, const Tensor& state, const std::vector<std::size_t>& candidates) {
  const std::size_t d = model.config.d;
  if (state.numel() != d) throw ShapeError("score_items: state has " + std::to_string(state.numel()) + " entries, d=" + std::to_string(d));
  for (Real v : state.values())
    if (!std::isfinite(v)) throw DomainError("score_items: non-finite user state");
  std::vector<Real> scores(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (candidates[c] > model.config.num_items) throw DomainError("score_items: candidate id out of range");
    const Real* row = model.item_emb.data() + candidates[c] * d;
    Real s = 0;
    for (std::size_t j = 0; j < d; ++j) s += state.at(j) * row[j];
    scores[c] = s;
  }
  return scores;
}

Tensor score_items(Tape& tape, const SeqRecModel& model, const Tensor& state, const std::vector<std::size_t>& candidates) {
  return matmul_nt(tape, state, embedding(tape, model.item_emb, candidates));
}

std::vector<std::size_t> dense_ids(const data::ItemIndex& index, const std::vector<std::string>& items) {
  std::vector<std::size_t> out;
  out.reserve(items.size());
  for (const auto& i : items) out.push_back(index.id(i));
  return out;
}

std::size_t sample_negative(std::size_t num_items, const std::vector<bool>& exclude, Rng& rng) {
  std::size_t excluded = 0;
  for (std::size_t i = 1; i <= num_items && i < exclude.size(); ++i) excluded += exclude[i];
  if (excluded >= num_items) return 0;
  for (;;) {
    const std::size_t id = 1 + static_cast<std::size_t>(rng.below(num_items));
    if (id >= exclude.size() || !exclude[id]) return id;
  }
}

TrainResult pretrain(SeqRecModel& model, const data::SplitDataset& split, const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_epoch) {
  if (split.count(split.train) == 0) throw DomainError("pretrain: empty training split");
  const std::size_t M = model.config.num_items;
  struct Example {
    std::vector<std::size_t> inputs, targets;
    std::vector<bool> seen;
  };
  std::vector<Example> examples;
  for (const auto& seq : split.train) {
    if (seq.size() < 2) continue;
    const auto ids = dense_ids(split.items, data::truncate_sequence(seq, model.config.max_len + 1).items);
    Example ex;
    ex.inputs.assign(ids.begin(), ids.end() - 1);
    ex.targets.assign(ids.begin() + 1, ids.end());
    ex.seen.assign(M + 1, false);
    for (const auto& item : seq.items) ex.seen[split.items.id(item)] = true;
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw DomainError("pretrain: no training sequence has two or more items");

  Adam opt(model.parameters(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng = Rng(cfg.seed).derive("seqrec-pretrain");
  TrainResult result;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0;
    std::size_t pairs = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      Tape tape;
      std::vector<Tensor> pos_parts, neg_parts;
      for (std::size_t b = start; b < std::min(order.size(), start + batch); ++b) {
        const Example& ex = examples[order[b]];
        std::vector<std::size_t> negs(ex.targets.size());
        for (auto& n : negs) n = sample_negative(M, ex.seen, rng);
        if (negs[0] == 0) continue;
        Tensor h = encode_sequence(tape, model, ex.inputs);
        pos_parts.push_back(nn::row_dot(tape, h, embedding(tape, model.item_emb, ex.targets)));
        neg_parts.push_back(nn::row_dot(tape, h, embedding(tape, model.item_emb, negs)));
      }
      if (pos_parts.empty()) continue;
      Tensor pos = concat_flat(tape, pos_parts);
      Tensor neg = concat_flat(tape, neg_parts);
      Tensor loss = nn::bpr_loss(tape, pos, neg);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      total += double(loss.item()) * double(pos.numel());
      pairs += pos.numel();
    }
    result.epoch_loss.push_back(pairs ? total / double(pairs) : 0.0);
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

}  // namespace SEQXREC_NS::seqrec
