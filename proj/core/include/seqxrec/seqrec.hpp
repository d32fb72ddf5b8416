#pragma once

#include <functional>
#include <vector>

#include "seqxrec/data.hpp"
#include "seqxrec/nn.hpp"

namespace SEQXREC_NS::seqrec {

using num::ParamList;
using num::Tape;
using num::Tensor;

struct SeqRecConfig {
  std::size_t num_items = 0;
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_len = 50;
};

// Per-layer weight deltas; an empty vector means no adaptation.
using LayerDeltas = std::vector<nn::BlockDeltas>;

class SeqRecModel {
 public:
  SeqRecConfig config;
  Tensor item_emb;  // [(M + 1) x d], row 0 is padding
  Tensor pos_emb;   // [max_len x d]
  std::vector<nn::BlockParams> blocks;
  nn::LayerNorm final_ln;

  static SeqRecModel init(const SeqRecConfig& config, std::uint64_t seed);
  // item_emb, pos_emb, layer{l}.*, final_ln.*
  ParamList parameters() const;
  SeqRecModel clone() const;
};

// Causal encoding of dense item ids -> [n x d]; row t is the state after the
// prefix ending at position t.
Tensor encode_sequence(Tape& tape, const SeqRecModel& model, const std::vector<std::size_t>& items,
                       const LayerDeltas* adapters = nullptr);

// Last row of encode_sequence -> [d].
Tensor user_state(Tape& tape, const SeqRecModel& model, const std::vector<std::size_t>& items,
                  const LayerDeltas* adapters = nullptr);

// Dot products of the state with item embedding rows.
std::vector<Real> score_items(const SeqRecModel& model, const Tensor& state, const std::vector<std::size_t>& candidates);
Tensor score_items(Tape& tape, const SeqRecModel& model, const Tensor& state, const std::vector<std::size_t>& candidates);

std::vector<std::size_t> dense_ids(const data::ItemIndex& index, const std::vector<std::string>& items);

// Uniform item in 1..M outside `exclude`; 0 when every item is excluded.
std::size_t sample_negative(std::size_t num_items, const std::vector<bool>& exclude, Rng& rng);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 5e-4;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

// Next-item BPR on the training fragments, one uniform negative per
// positive, rejected against the user's training items.
TrainResult pretrain(SeqRecModel& model, const data::SplitDataset& split, const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_epoch = {});

}  // namespace SEQXREC_NS::seqrec
