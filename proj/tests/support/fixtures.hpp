#pragma once

// Small models and corpora shared by the unit tests and the acceptance suite.

#include <memory>
#include <string>
#include <vector>

#include "seqxrec/eer.hpp"
#include "seqxrec/groundtruth.hpp"
#include "seqxrec/seg.hpp"
#include "seqxrec/synthetic.hpp"

namespace fixtures {
inline namespace SEQXREC_PRECISION {

using namespace seqxrec;

inline seqrec::SeqRecModel tiny_rec(std::uint64_t seed, std::size_t items = 12, std::size_t d = 8,
                                    std::size_t layers = 2, std::size_t heads = 2, std::size_t max_len = 6) {
  seqrec::SeqRecConfig cfg;
  cfg.num_items = items;
  cfg.d = d;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.max_len = max_len;
  return seqrec::SeqRecModel::init(cfg, seed);
}

inline moe::MoEConfig tiny_moe(std::size_t d, std::size_t d_out, std::size_t experts, std::size_t max_len = 8) {
  moe::MoEConfig c;
  c.d = d;
  c.d_out = d_out;
  c.heads = 2;
  c.layers = 1;
  c.experts = experts;
  c.max_len = max_len;
  return c;
}

// Replaces every hypernetwork output weight with small normal values so
// that deltas are nonzero.
inline void randomize_hyper_output(eer::Hypernetwork& h, std::uint64_t seed, double std = 0.05) {
  Rng rng(seed);
  for (auto& layer : h.layers) {
    for (auto& v : layer.out.w.values()) v = static_cast<Real>(rng.normal() * std);
    for (auto& v : layer.out.b.values()) v = static_cast<Real>(rng.normal() * std);
  }
}

inline num::Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std = 1.0) {
  num::Tensor t = num::Tensor::zeros({rows, cols});
  for (auto& v : t.values()) v = static_cast<Real>(rng.normal() * std);
  return t;
}

// Explanation texts drawn from the template bank over a synthetic catalog.
inline std::vector<std::string> explanation_corpus(std::size_t n, std::uint64_t seed) {
  pipeline::SyntheticSpec spec;
  spec.users = 10;
  spec.items = std::max<std::size_t>(n, 20);
  spec.categories = 6;
  spec.seed = seed;
  const auto data = pipeline::generate_synthetic(spec);
  const auto bank = groundtruth::TemplateBank::load();
  Rng rng(seed);
  std::vector<std::string> out;
  for (const auto& [id, item] : data.catalog) {
    if (out.size() == n) break;
    groundtruth::ExplanationRecord rec;
    rec.category_level = groundtruth::category_explanation(item);
    rec.intent_level = groundtruth::intent_explanation(item, rng, bank);
    out.push_back(rec.text());
  }
  return out;
}

struct TinySeg {
  std::shared_ptr<text::Vocabulary> vocab;
  seg::MicroLM lm;
  seg::SegModel model;
  seg::SegConfig config;
  std::vector<std::size_t> sys_ids;
  std::vector<seg::SegExample> examples;

  seg::SegContext ctx() const { return {&lm, vocab.get(), sys_ids, config}; }
};

// Generator over `targets` with random encoder outputs; one example per target.
inline TinySeg tiny_seg(const std::vector<std::string>& targets, std::uint64_t seed, std::size_t d_lm = 16,
                        std::size_t layers = 1) {
  TinySeg s;
  std::vector<std::string> corpus = targets;
  corpus.push_back("explain the next item");
  corpus.push_back("bars , food");
  s.vocab = std::make_shared<text::Vocabulary>(text::Vocabulary::build(corpus));
  seg::LMConfig lc;
  lc.vocab = s.vocab->size();
  lc.d_lm = d_lm;
  lc.layers = layers;
  lc.heads = 2;
  lc.ctx = 96;
  s.lm = seg::MicroLM::init(lc, seed);
  seg::SegConfig sc;
  sc.rec_adapter = tiny_moe(8, 8, 2);
  sc.sem_adapter = tiny_moe(6, 8, 2);
  sc.rec_adapter.dropout = sc.sem_adapter.dropout = 0;
  s.model = seg::SegModel::init(sc, d_lm, seed + 1);
  s.config = sc;
  s.sys_ids = s.vocab->encode("explain the next item");
  Rng rng(seed + 2);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    seg::SegExample ex;
    ex.user_id = "u" + std::to_string(i);
    ex.item_id = "i" + std::to_string(i);
    const std::size_t n = 2 + rng.below(4);
    ex.s_rec = random_matrix(rng, n, 8);
    ex.s_sem = random_matrix(rng, n, 6);
    ex.cat_ids = seg::category_ids(*s.vocab, {"bars", "food"}, 8);
    ex.target_ids = s.vocab->encode(targets[i]);
    s.examples.push_back(std::move(ex));
  }
  return s;
}

}  // namespace SEQXREC_PRECISION
}  // namespace fixtures
