#include "seqxrec/seg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqxrec/optim.hpp"

namespace SEQXREC_NS::seg {

using namespace num;

MicroLM MicroLM::init(const LMConfig& config, std::uint64_t seed) {
  if (config.vocab <= text::Vocabulary::kNumSpecial) throw DomainError("MicroLM: vocabulary is empty");
  if (config.heads == 0 || config.d_lm % config.heads != 0) throw DomainError("MicroLM: heads must divide d_lm");
  Rng rng = Rng(seed).derive("lm-init");
  MicroLM lm;
  lm.config = config;
  lm.tok_emb = nn::normal_init({config.vocab, config.d_lm}, 1.0 / std::sqrt(double(config.d_lm)), rng);
  lm.pos_emb = nn::normal_init({config.ctx, config.d_lm}, 0.02, rng);
  for (std::size_t l = 0; l < config.layers; ++l) lm.blocks.push_back(nn::BlockParams::init(config.d_lm, 4 * config.d_lm, rng));
  lm.final_ln = nn::LayerNorm::init(config.d_lm);
  return lm;
}

ParamList MicroLM::parameters() const {
  ParamList out = {{"lm.tok_emb", tok_emb}, {"lm.pos_emb", pos_emb}};
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(out, "lm.block" + std::to_string(l));
  final_ln.collect(out, "lm.final_ln");
  return out;
}

void MicroLM::set_frozen(bool frozen) const { num::set_requires_grad(parameters(), !frozen); }

InjectionProjector InjectionProjector::init(std::size_t d_out, std::size_t d_lm, Rng& rng) {
  const double sd = 0.1 / std::sqrt(double(d_out));
  return {nn::normal_init({d_out, d_lm}, sd, rng), nn::normal_init({d_out, d_lm}, sd, rng)};
}

ParamList InjectionProjector::parameters() const { return {{"projector.rec.w", rec}, {"projector.sem.w", sem}}; }

Ablation Ablation::parse(const std::string& name) {
  if (name.empty() || name == "none") return {};
  if (name == "wo_be") return {false, true, true};
  if (name == "wo_se") return {true, false, true};
  if (name == "wo_ct") return {true, true, false};
  if (name == "wo_de") return {false, false, true};
  throw ConfigError("unknown ablation '" + name + "' (expected none, wo_be, wo_se, wo_ct or wo_de)");
}

SegModel SegModel::init(const SegConfig& cfg, std::size_t d_lm, std::uint64_t seed) {
  Rng rng = Rng(seed).derive("seg-init");
  SegModel m;
  m.rec = moe::MoEAdapter::init(cfg.rec_adapter, rng);
  m.sem = moe::MoEAdapter::init(cfg.sem_adapter, rng);
  if (cfg.rec_adapter.d_out != cfg.sem_adapter.d_out) throw ConfigError("SEG: both adapters need the same d_out");
  m.projector = InjectionProjector::init(cfg.rec_adapter.d_out, d_lm, rng);
  return m;
}

ParamList SegModel::parameters() const {
  ParamList out = rec.parameters("adapter.rec");
  append(out, sem.parameters("adapter.sem"));
  append(out, projector.parameters());
  return out;
}

std::vector<long> PromptAssembly::loss_targets() const {
  std::vector<long> t(length(), -1);
  const std::size_t p = prefix_length();
  for (std::size_t j = 0; j < target_ids.size(); ++j) t[p - 1 + j] = static_cast<long>(target_ids[j]);
  if (!target_ids.empty()) t[length() - 1] = static_cast<long>(text::Vocabulary::kEos);
  return t;
}

std::vector<std::size_t> category_ids(const text::Vocabulary& vocab, const std::vector<std::string>& cat_texts,
                                      std::size_t max_tokens) {
  std::vector<std::vector<std::size_t>> kept;
  std::size_t used = 0;
  for (auto it = cat_texts.rbegin(); it != cat_texts.rend(); ++it) {
    auto ids = vocab.encode(*it);
    const std::size_t cost = ids.size() + (kept.empty() ? 0 : 1);
    if (used + cost > max_tokens) break;
    used += cost;
    kept.push_back(std::move(ids));
  }
  std::vector<std::size_t> out;
  const std::size_t comma = vocab.id(",");
  for (auto it = kept.rbegin(); it != kept.rend(); ++it) {
    if (!out.empty()) out.push_back(comma);
    out.insert(out.end(), it->begin(), it->end());
  }
  return out;
}

namespace {

Tensor project(Tape& tape, const Tensor& e, const Tensor& w, std::size_t d_lm) {
  if (!e.defined()) return Tensor::zeros({d_lm});
  return matmul(tape, e, w);
}

Tensor lm_hidden(Tape& tape, const MicroLM& lm, const Tensor& rows, const Tensor* inject,
                 const std::vector<bool>& inject_blocks, std::vector<nn::KVCache>* caches, std::size_t offset) {
  const auto& cfg = lm.config;
  const std::size_t n = rows.rows();
  if (offset + n > cfg.ctx)
    throw DomainError("context overflow: " + std::to_string(offset + n) + " positions exceed ctx " + std::to_string(cfg.ctx));
  if (!inject_blocks.empty() && inject_blocks.size() != lm.blocks.size())
    throw ConfigError("inject_blocks has " + std::to_string(inject_blocks.size()) + " entries for " +
                      std::to_string(lm.blocks.size()) + " blocks");
  if (caches != nullptr && caches->size() != lm.blocks.size()) caches->assign(lm.blocks.size(), {});
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), offset);
  Tensor x = add(tape, rows, embedding(tape, lm.pos_emb, positions));
  for (std::size_t l = 0; l < lm.blocks.size(); ++l) {
    nn::BlockOptions opt;
    opt.heads = cfg.heads;
    opt.causal = true;
    if (inject != nullptr && (inject_blocks.empty() || inject_blocks[l])) opt.inject = inject;
    x = nn::block_forward(tape, lm.blocks[l], x, opt, caches ? &(*caches)[l] : nullptr);
  }
  return lm.final_ln(tape, x);
}

std::size_t argmax(std::span<const Real> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

AssembledInput assemble_input(Tape& tape, const MicroLM& lm, const InjectionProjector& proj, const AdaptedEmbedding& e,
                              const std::vector<std::size_t>& sys_ids, const std::vector<std::size_t>& cat_ids,
                              const std::vector<std::size_t>& target_ids) {
  const std::size_t d_lm = lm.config.d_lm;
  AssembledInput out;
  out.layout = {sys_ids, cat_ids, target_ids};
  if (out.layout.length() > lm.config.ctx)
    throw DomainError("context overflow: prompt of " + std::to_string(out.layout.length()) + " rows exceeds ctx " +
                      std::to_string(lm.config.ctx));
  const Tensor p_rec = project(tape, e.rec, proj.rec, d_lm);
  const Tensor p_sem = project(tape, e.sem, proj.sem, d_lm);
  std::vector<Tensor> parts;
  if (!sys_ids.empty()) parts.push_back(embedding(tape, lm.tok_emb, sys_ids));
  parts.push_back(p_rec);
  parts.push_back(p_sem);
  if (!cat_ids.empty()) parts.push_back(embedding(tape, lm.tok_emb, cat_ids));
  if (!target_ids.empty()) parts.push_back(embedding(tape, lm.tok_emb, target_ids));
  out.rows = concat_rows(tape, parts);
  out.inject = add(tape, p_rec, p_sem);
  return out;
}

Tensor injected_attention(Tape& tape, const nn::BlockParams& block, const Tensor& x, const Tensor& inject,
                          std::size_t heads) {
  const Tensor q = add_row(tape, matmul(tape, x, block.wq), inject);
  const Tensor k = add_row(tape, matmul(tape, x, block.wk), inject);
  const Tensor v = add_row(tape, matmul(tape, x, block.wv), inject);
  return attention(tape, q, k, v, heads, true);
}

Tensor lm_forward(Tape& tape, const MicroLM& lm, const Tensor& rows, const Tensor* inject,
                  const std::vector<bool>& inject_blocks, std::vector<nn::KVCache>* caches, std::size_t offset) {
  return matmul_nt(tape, lm_hidden(tape, lm, rows, inject, inject_blocks, caches, offset), lm.tok_emb);
}

AdaptedEmbedding adapted_embedding(Tape& tape, const SegModel& model, const SegExample& ex, const Ablation& ablation,
                                   Rng* rng, bool training) {
  AdaptedEmbedding e;
  if (ablation.use_rec) e.rec = moe::forward(tape, model.rec, ex.s_rec, rng, training);
  if (ablation.use_sem) e.sem = moe::forward(tape, model.sem, ex.s_sem, rng, training);
  return e;
}

namespace {

// Token-weighted NLL of one prompt; e may hold undefined paths.
Tensor example_nll(Tape& tape, const SegContext& ctx, const InjectionProjector& proj, const AdaptedEmbedding& e,
                   const SegExample& ex, const Ablation& ablation) {
  if (ex.target_ids.empty()) throw DomainError("seg_loss: empty target for " + ex.user_id + "/" + ex.item_id);
  const MicroLM& lm = *ctx.lm;
  const std::vector<std::size_t> no_cat;
  AssembledInput a = assemble_input(tape, lm, proj, e, ctx.sys_ids, ablation.use_cat ? ex.cat_ids : no_cat, ex.target_ids);
  const std::size_t prefix = a.layout.prefix_length();
  const std::size_t count = ex.target_ids.size() + 1;
  Tensor h = lm_hidden(tape, lm, a.rows, &a.inject, ctx.config.inject_blocks, nullptr, 0);
  Tensor logits = matmul_nt(tape, slice_rows(tape, h, prefix - 1, count), lm.tok_emb);
  std::vector<long> targets(ex.target_ids.begin(), ex.target_ids.end());
  targets.push_back(static_cast<long>(text::Vocabulary::kEos));
  return cross_entropy(tape, logits, targets);
}

Tensor weighted_mean(Tape& tape, const std::vector<Tensor>& losses, const std::vector<std::size_t>& counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < losses.size(); ++i) parts.push_back(scale(tape, losses[i], Real(counts[i] / total)));
  return sum(tape, concat_flat(tape, parts));
}

}  // namespace

Tensor seg_loss(Tape& tape, const SegContext& ctx, const SegModel& model, const std::vector<const SegExample*>& batch,
                const Ablation& ablation, Rng* rng, bool training) {
  if (batch.empty()) throw DomainError("seg_loss: empty batch");
  std::vector<Tensor> losses;
  std::vector<std::size_t> counts;
  for (const SegExample* ex : batch) {
    const AdaptedEmbedding e = adapted_embedding(tape, model, *ex, ablation, rng, training);
    losses.push_back(example_nll(tape, ctx, model.projector, e, *ex, ablation));
    counts.push_back(ex->target_ids.size() + 1);
  }
  return weighted_mean(tape, losses, counts);
}

namespace {

template <typename StepFn>
std::vector<double> run_epochs(std::size_t n, const TrainConfig& cfg, Rng& rng, StepFn step,
                               const std::function<void(std::size_t, double)>& on_epoch) {
  std::vector<double> curve;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0, weight = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + std::min(n, start + batch));
      const auto [loss, tokens] = step(idx);
      total += loss * tokens;
      weight += tokens;
    }
    curve.push_back(weight > 0 ? total / weight : 0.0);
    if (on_epoch) on_epoch(epoch, curve.back());
  }
  return curve;
}

}  // namespace

TrainResult pretrain_lm(MicroLM& lm, const SegContext& ctx, const std::vector<SegExample>& examples,
                        const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch) {
  if (examples.empty()) throw DomainError("pretrain_lm: no examples");
  SegContext local = ctx;
  local.lm = &lm;
  lm.set_frozen(false);
  Adam opt(lm.parameters(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng = Rng(cfg.seed).derive("lm-pretrain");
  const InjectionProjector none;
  const Ablation ablation;
  TrainResult result;
  result.backbone_hash_before = hash_parameters(lm.parameters());
  result.epoch_loss = run_epochs(
      examples.size(), cfg, rng,
      [&](const std::vector<std::size_t>& idx) {
        Tape tape;
        std::vector<Tensor> losses;
        std::vector<std::size_t> counts;
        for (std::size_t i : idx) {
          losses.push_back(example_nll(tape, local, none, AdaptedEmbedding{}, examples[i], ablation));
          counts.push_back(examples[i].target_ids.size() + 1);
        }
        Tensor loss = weighted_mean(tape, losses, counts);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        return std::pair<double, double>(loss.item(), std::accumulate(counts.begin(), counts.end(), 0.0));
      },
      on_epoch);
  lm.set_frozen(true);
  result.backbone_hash_after = hash_parameters(lm.parameters());
  return result;
}

TrainResult train_seg(const SegContext& ctx, SegModel& model, const std::vector<SegExample>& examples,
                      const TrainConfig& cfg, const Ablation& ablation,
                      const std::function<void(std::size_t, double)>& on_epoch) {
  if (examples.empty()) throw DomainError("train_seg: no examples");
  ctx.lm->set_frozen(true);
  TrainResult result;
  result.backbone_hash_before = hash_parameters(ctx.lm->parameters());
  Adam opt(model.parameters(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng = Rng(cfg.seed).derive("seg-train");
  Rng dropout_rng = rng.derive("dropout");
  result.epoch_loss = run_epochs(
      examples.size(), cfg, rng,
      [&](const std::vector<std::size_t>& idx) {
        Tape tape;
        std::vector<const SegExample*> batch;
        double tokens = 0;
        for (std::size_t i : idx) {
          batch.push_back(&examples[i]);
          tokens += double(examples[i].target_ids.size() + 1);
        }
        Tensor loss = seg_loss(tape, ctx, model, batch, ablation, &dropout_rng, true);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
        return std::pair<double, double>(loss.item(), tokens);
      },
      on_epoch);
  result.backbone_hash_after = hash_parameters(ctx.lm->parameters());
  if (result.backbone_hash_after != result.backbone_hash_before)
    throw Error("train_seg: backbone parameters changed during training");
  return result;
}

std::vector<std::size_t> generate_ids(const SegContext& ctx, const SegModel& model, const SegExample& ex,
                                      const GenerateOptions& opt, const Ablation& ablation) {
  std::vector<std::size_t> out;
  if (opt.max_tokens == 0) return out;
  const MicroLM& lm = *ctx.lm;
  Tape tape(Tape::Mode::kInference);
  const AdaptedEmbedding e = adapted_embedding(tape, model, ex, ablation);
  const std::vector<std::size_t> no_cat;
  AssembledInput a = assemble_input(tape, lm, model.projector, e, ctx.sys_ids, ablation.use_cat ? ex.cat_ids : no_cat, {});
  std::vector<nn::KVCache> caches;
  Tensor h = lm_hidden(tape, lm, a.rows, &a.inject, ctx.config.inject_blocks, &caches, 0);
  std::size_t position = a.rows.rows();
  Rng rng = Rng(opt.seed).derive("generate");
  for (;;) {
    Tensor logits = matmul_nt(tape, slice_rows(tape, h, h.rows() - 1, 1), lm.tok_emb);
    std::size_t next;
    if (opt.temperature > 0) {
      Tensor p = softmax(tape, scale(tape, logits, Real(1.0 / opt.temperature)), 1);
      double u = rng.uniform(), acc = 0;
      next = p.numel() - 1;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        acc += p.at(i);
        if (u < acc) {
          next = i;
          break;
        }
      }
    } else {
      next = argmax(logits.values());
    }
    if (next == text::Vocabulary::kEos) break;
    out.push_back(next);
    if (out.size() >= opt.max_tokens || position >= lm.config.ctx) break;
    Tensor row = embedding(tape, lm.tok_emb, {next});
    h = lm_hidden(tape, lm, row, &a.inject, ctx.config.inject_blocks, &caches, position);
    ++position;
  }
  return out;
}

std::string generate_explanation(const SegContext& ctx, const SegModel& model, const SegExample& ex,
                                 const GenerateOptions& opt, const Ablation& ablation) {
  return ctx.vocab->decode(generate_ids(ctx, model, ex, opt, ablation));
}

}  // namespace SEQXREC_NS::seg
