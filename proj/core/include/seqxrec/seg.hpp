#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seqxrec/moeadapter.hpp"
#include "seqxrec/textembed.hpp"

namespace SEQXREC_NS::seg {

using num::ParamList;
using num::Tape;
using num::Tensor;

struct LMConfig {
  std::size_t vocab = 0;
  std::size_t d_lm = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ctx = 256;
};

// Decoder-only LM; the output projection reuses tok_emb.
class MicroLM {
 public:
  LMConfig config;
  Tensor tok_emb;  // [V x d_lm]
  Tensor pos_emb;  // [ctx x d_lm]
  std::vector<nn::BlockParams> blocks;
  nn::LayerNorm final_ln;

  static MicroLM init(const LMConfig& config, std::uint64_t seed);
  // lm.tok_emb, lm.pos_emb, lm.block{l}.*, lm.final_ln.*
  ParamList parameters() const;
  void set_frozen(bool frozen) const;
};

struct InjectionProjector {
  Tensor rec, sem;  // [d_out x d_lm], no bias

  static InjectionProjector init(std::size_t d_out, std::size_t d_lm, Rng& rng);
  ParamList parameters() const;  // projector.rec.w, projector.sem.w
};

struct AdaptedEmbedding {
  Tensor rec, sem;  // [d_out]
};

// Components removed for ablation runs.
struct Ablation {
  bool use_rec = true;  // behavioral path (w/o BE when false)
  bool use_sem = true;  // semantic path (w/o SE when false)
  bool use_cat = true;  // category text (w/o CT when false)

  static Ablation parse(const std::string& name);  // none, wo_be, wo_se, wo_ct, wo_de
};

struct SegConfig {
  moe::MoEConfig rec_adapter;
  moe::MoEConfig sem_adapter;
  std::size_t max_cat_tokens = 64;
  std::size_t max_target_tokens = 48;
  // Blocks that receive the Q/K/V offsets; empty means every block.
  std::vector<bool> inject_blocks;
};

// The trainable part of the generator.
struct SegModel {
  moe::MoEAdapter rec, sem;
  InjectionProjector projector;

  static SegModel init(const SegConfig& cfg, std::size_t d_lm, std::uint64_t seed);
  // adapter.rec.*, adapter.sem.*, projector.*
  ParamList parameters() const;
};

// Row layout: [system tokens; rec slot; sem slot; category tokens; target tokens].
struct PromptAssembly {
  std::vector<std::size_t> sys_ids, cat_ids, target_ids;

  std::size_t rec_slot() const { return sys_ids.size(); }
  std::size_t sem_slot() const { return sys_ids.size() + 1; }
  std::size_t prefix_length() const { return sys_ids.size() + 2 + cat_ids.size(); }
  std::size_t length() const { return prefix_length() + target_ids.size(); }
  // Next-token target per row (-1 where no loss is taken): each target token
  // is predicted by the row before it and the end token by the last row.
  std::vector<long> loss_targets() const;
};

struct AssembledInput {
  PromptAssembly layout;
  Tensor rows;    // [length x d_lm]
  Tensor inject;  // [d_lm], projected rec + projected sem
};

// Category text ids, newest categories first to survive a budget of max_tokens.
std::vector<std::size_t> category_ids(const text::Vocabulary& vocab, const std::vector<std::string>& cat_texts,
                                      std::size_t max_tokens);

AssembledInput assemble_input(Tape& tape, const MicroLM& lm, const InjectionProjector& proj, const AdaptedEmbedding& e,
                              const std::vector<std::size_t>& sys_ids, const std::vector<std::size_t>& cat_ids,
                              const std::vector<std::size_t>& target_ids);

// Attention sub-layer of one block on already-normalized rows, with the
// offset added to every row of Q, K and V.
Tensor injected_attention(Tape& tape, const nn::BlockParams& block, const Tensor& x, const Tensor& inject,
                          std::size_t heads);

// Logits [n x V] for rows placed at positions offset..offset+n-1. With caches
// (one per block), earlier positions are read from and appended to them.
Tensor lm_forward(Tape& tape, const MicroLM& lm, const Tensor& rows, const Tensor* inject,
                  const std::vector<bool>& inject_blocks, std::vector<nn::KVCache>* caches = nullptr,
                  std::size_t offset = 0);

// Inputs for one (sequence, target) pair. Encoder outputs are fixed, so they
// are computed once.
struct SegExample {
  std::string user_id, item_id;
  Tensor s_rec;  // [n x d]
  Tensor s_sem;  // [n x d_sem]
  std::vector<std::size_t> cat_ids;
  std::vector<std::size_t> target_ids;
};

struct SegContext {
  const MicroLM* lm = nullptr;
  const text::Vocabulary* vocab = nullptr;
  std::vector<std::size_t> sys_ids;
  SegConfig config;
};

AdaptedEmbedding adapted_embedding(Tape& tape, const SegModel& model, const SegExample& ex, const Ablation& ablation,
                                   Rng* rng = nullptr, bool training = false);

// Mean next-token NLL over every target token (and end token) in the batch.
Tensor seg_loss(Tape& tape, const SegContext& ctx, const SegModel& model, const std::vector<const SegExample*>& batch,
                const Ablation& ablation = {}, Rng* rng = nullptr, bool training = false);

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 1e-6;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

// Language-model warm start of the backbone on prompts with zero injection.
TrainResult pretrain_lm(MicroLM& lm, const SegContext& ctx, const std::vector<SegExample>& examples,
                        const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch = {});

// Trains adapters and projectors with the backbone frozen.
TrainResult train_seg(const SegContext& ctx, SegModel& model, const std::vector<SegExample>& examples,
                      const TrainConfig& cfg, const Ablation& ablation = {},
                      const std::function<void(std::size_t, double)>& on_epoch = {});

struct GenerateOptions {
  std::size_t max_tokens = 48;
  // Greedy when zero; otherwise samples from softmax(logits / temperature).
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

std::vector<std::size_t> generate_ids(const SegContext& ctx, const SegModel& model, const SegExample& ex,
                                      const GenerateOptions& opt, const Ablation& ablation = {});
std::string generate_explanation(const SegContext& ctx, const SegModel& model, const SegExample& ex,
                                 const GenerateOptions& opt, const Ablation& ablation = {});

}  // namespace SEQXREC_NS::seg
