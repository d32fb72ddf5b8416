#include "seqxrec/eer.hpp"

#include <algorithm>
#include <numeric>

#include "seqxrec/metrics.hpp"
#include "seqxrec/optim.hpp"

namespace SEQXREC_NS::eer {

using namespace num;

Hypernetwork Hypernetwork::init(const HyperConfig& config, const seqrec::SeqRecModel& base, std::uint64_t seed) {
  if (config.targets.empty()) throw ConfigError("hypernetwork: no target weights selected");
  Rng rng = Rng(seed).derive("hyper-init");
  Hypernetwork h;
  h.config = config;
  for (const auto& block : base.blocks) {
    Layer layer;
    for (const auto& name : config.targets) {
      const Tensor& w = block.weight(name);
      layer.offsets.push_back(layer.total);
      layer.shapes.push_back(w.shape());
      layer.total += w.numel();
    }
    layer.in = nn::Linear::init(config.d_sem, config.hidden, rng);
    layer.out = nn::Linear::zeros(config.hidden, layer.total);
    h.layers.push_back(std::move(layer));
  }
  return h;
}

ParamList Hypernetwork::parameters() const {
  ParamList out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].in.collect(out, "hyper.layer" + std::to_string(l) + ".in");
    layers[l].out.collect(out, "hyper.layer" + std::to_string(l) + ".out");
  }
  return out;
}

Tensor encode_explanation(const text::SemanticEncoder& enc, const std::string& text) { return enc.embed_text(text); }

std::vector<seqrec::LayerDeltas> generate_adapters_batch(Tape& tape, const Hypernetwork& hyper, const Tensor& E) {
  if (E.rank() != 2 || E.cols() != hyper.config.d_sem)
    throw ShapeError("generate_adapters: expected [B x " + std::to_string(hyper.config.d_sem) + "], got " +
                     shape_string(E.shape()));
  const std::size_t B = E.rows();
  std::vector<seqrec::LayerDeltas> out(B, seqrec::LayerDeltas(hyper.layers.size()));
  for (std::size_t l = 0; l < hyper.layers.size(); ++l) {
    const auto& layer = hyper.layers[l];
    const auto parts =
        linear_split(tape, gelu(tape, layer.in(tape, E)), layer.out.w, layer.out.b, layer.shapes, hyper.config.gamma);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < hyper.config.targets.size(); ++t) out[b][l][hyper.config.targets[t]] = parts[b][t];
  }
  return out;
}

seqrec::LayerDeltas generate_adapters(Tape& tape, const Hypernetwork& hyper, const Tensor& e) {
  return generate_adapters_batch(tape, hyper, reshape(tape, e, {1, e.numel()}))[0];
}

std::vector<Real> score_conditioned(const seqrec::SeqRecModel& base, const Hypernetwork& hyper,
                                    const std::vector<std::size_t>& hist, const Tensor& e,
                                    const std::vector<std::size_t>& candidates) {
  if (hist.empty()) throw DomainError("score_conditioned: empty history");
  Tape tape(Tape::Mode::kInference);
  const auto deltas = generate_adapters(tape, hyper, e);
  const Tensor state = seqrec::user_state(tape, base, hist, &deltas);
  return seqrec::score_items(base, state, candidates);
}

Tensor eer_loss(Tape& tape, const seqrec::SeqRecModel& base, const Hypernetwork& hyper,
                const std::vector<const EerExample*>& batch) {
  if (batch.empty()) throw DomainError("eer_loss: empty batch");
  std::vector<Tensor> rows;
  for (const auto* ex : batch) rows.push_back(ex->e);
  const auto deltas = generate_adapters_batch(tape, hyper, concat_rows(tape, rows));
  std::vector<Tensor> pos, neg;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor state = seqrec::user_state(tape, base, batch[b]->hist, &deltas[b]);
    const Tensor scores = seqrec::score_items(tape, base, state, {batch[b]->target, batch[b]->negative});
    pos.push_back(slice_flat(tape, scores, 0, {1}));
    neg.push_back(slice_flat(tape, scores, 1, {1}));
  }
  return nn::bpr_loss(tape, concat_flat(tape, pos), concat_flat(tape, neg));
}

TrainResult train_eer(seqrec::SeqRecModel& base, Hypernetwork& hyper, const data::SplitDataset& split,
                      const ExplanationMap& ground_truth, const text::SemanticEncoder& enc, const TrainConfig& cfg,
                      const std::function<void(std::size_t, double)>& on_epoch) {
  const std::size_t M = base.config.num_items;
  std::vector<EerExample> examples;
  std::vector<std::size_t> owner;
  std::vector<std::vector<bool>> seen;
  std::vector<std::string> missing;
  std::map<std::string, Tensor> cache;
  for (std::size_t u = 0; u < split.train.size(); ++u) {
    const auto& seq = split.train[u];
    const auto ids = seqrec::dense_ids(split.items, seq.items);
    std::vector<bool> s(M + 1, false);
    for (std::size_t id : ids) s[id] = true;
    seen.push_back(std::move(s));
    for (std::size_t t = 1; t < ids.size(); ++t) {
      auto it = ground_truth.find({seq.user_id, seq.items[t]});
      if (it == ground_truth.end()) {
        missing.push_back(seq.user_id + "/" + seq.items[t]);
        continue;
      }
      EerExample ex;
      const std::size_t begin = t > base.config.max_len ? t - base.config.max_len : 0;
      ex.hist.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(t));
      ex.target = ids[t];
      auto [c, fresh] = cache.try_emplace(it->second);
      if (fresh) c->second = encode_explanation(enc, it->second);
      ex.e = c->second;
      examples.push_back(std::move(ex));
      owner.push_back(u);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i) list += (i ? ", " : "") + missing[i];
    throw Error("train_eer: " + std::to_string(missing.size()) + " training pairs lack a ground-truth explanation: " +
                list + (missing.size() > 10 ? ", ..." : ""));
  }
  if (examples.empty()) throw DomainError("train_eer: no training pairs");

  ParamList params = base.parameters();
  append(params, hyper.parameters());
  Adam opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng = Rng(cfg.seed).derive("eer-train");
  TrainResult result;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i = 0; i < examples.size(); ++i)
      examples[i].negative = seqrec::sample_negative(M, seen[owner[i]], rng);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<const EerExample*> part;
      for (std::size_t b = start; b < std::min(order.size(), start + batch); ++b)
        if (examples[order[b]].negative != 0) part.push_back(&examples[order[b]]);
      if (part.empty()) continue;
      Tape tape;
      Tensor loss = eer_loss(tape, base, hyper, part);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      total += double(loss.item()) * double(part.size());
      count += part.size();
    }
    result.epoch_loss.push_back(count ? total / double(count) : 0.0);
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

Condition parse_condition(const std::string& name) {
  if (name == "generated") return Condition::kGenerated;
  if (name == "ground_truth") return Condition::kGroundTruth;
  if (name == "random") return Condition::kRandom;
  if (name == "empty") return Condition::kEmpty;
  throw ConfigError("unknown condition '" + name + "' (expected generated, ground_truth, random or empty)");
}

std::string condition_name(Condition c) {
  switch (c) {
    case Condition::kGenerated: return "generated";
    case Condition::kGroundTruth: return "ground_truth";
    case Condition::kRandom: return "random";
    case Condition::kEmpty: return "empty";
  }
  return "unknown";
}

std::vector<TestCase> build_test_cases(const data::SplitDataset& split, std::size_t max_len) {
  std::vector<TestCase> cases;
  for (std::size_t u = 0; u < split.num_users(); ++u) {
    const auto full = split.full_sequence(u);
    const auto ids = seqrec::dense_ids(split.items, full.items);
    const std::size_t first_test = split.train[u].size() + split.validation[u].size();
    for (std::size_t p = first_test; p < ids.size(); ++p) {
      TestCase tc;
      tc.user = u;
      tc.user_id = full.user_id;
      tc.item_id = full.items[p];
      tc.position = p;
      const std::size_t begin = p > max_len ? p - max_len : 0;
      tc.hist.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(p));
      tc.target = ids[p];
      cases.push_back(std::move(tc));
    }
  }
  return cases;
}

void assert_no_leakage(const TestCase& tc, const std::vector<std::size_t>& full_sequence) {
  const std::size_t n = tc.hist.size();
  if (tc.position >= full_sequence.size() || full_sequence[tc.position] != tc.target || n > tc.position ||
      !std::equal(tc.hist.begin(), tc.hist.end(), full_sequence.begin() + static_cast<std::ptrdiff_t>(tc.position - n)))
    throw Error("leakage check failed for " + tc.user_id + "/" + tc.item_id +
                ": history is not the strict prefix before the target");
}

UtilityReport evaluate_utility(const seqrec::SeqRecModel& base, const Hypernetwork& hyper,
                               const data::SplitDataset& split, Condition condition, const ExplanationSources& sources,
                               const text::SemanticEncoder& enc, const EvalOptions& opt) {
  const auto cases = build_test_cases(split, opt.max_len);
  const std::size_t M = base.config.num_items;
  UtilityReport report;
  report.condition = condition;
  for (std::size_t k : opt.k_list) report.recall[k] = report.ndcg[k] = 0.0;

  if (condition == Condition::kGenerated) {
    if (sources.generated == nullptr) throw MissingArtifactError("generated condition needs generated explanations");
    std::size_t absent = 0;
    for (const auto& tc : cases) absent += sources.generated->count({tc.user_id, tc.item_id}) == 0;
    if (absent > 0)
      throw Error("generated explanations cover " + std::to_string(cases.size() - absent) + " of " +
                  std::to_string(cases.size()) + " test pairs");
  }
  if (condition == Condition::kGroundTruth && sources.ground_truth == nullptr)
    throw MissingArtifactError("ground_truth condition needs ground-truth explanations");
  if (condition == Condition::kRandom && sources.random_pool.empty())
    throw DomainError("random condition needs a non-empty pool of training explanations");

  Rng rng = Rng(opt.seed).derive("random-condition");
  std::vector<std::size_t> full_ids;
  std::size_t full_user = static_cast<std::size_t>(-1);
  for (const auto& tc : cases) {
    if (tc.user != full_user) {
      full_ids = seqrec::dense_ids(split.items, split.full_sequence(tc.user).items);
      full_user = tc.user;
    }
    assert_no_leakage(tc, full_ids);
    ++report.leakage_checks;

    std::string explanation;
    switch (condition) {
      case Condition::kGroundTruth: {
        auto it = sources.ground_truth->find({tc.user_id, tc.item_id});
        if (it == sources.ground_truth->end())
          throw Error("no ground-truth explanation for " + tc.user_id + "/" + tc.item_id);
        explanation = it->second;
        break;
      }
      case Condition::kGenerated: explanation = sources.generated->at({tc.user_id, tc.item_id}); break;
      case Condition::kRandom: explanation = sources.random_pool[rng.below(sources.random_pool.size())]; break;
      case Condition::kEmpty: break;
    }

    std::vector<bool> drop(M + 1, false);
    if (opt.exclude_history)
      for (std::size_t id : tc.hist) drop[id] = true;
    drop[tc.target] = false;
    std::vector<std::size_t> candidates;
    for (std::size_t id = 1; id <= M; ++id)
      if (!drop[id]) candidates.push_back(id);

    const auto scores = score_conditioned(base, hyper, tc.hist, encode_explanation(enc, explanation), candidates);
    const metrics::RankedList ranked(candidates, scores);
    for (std::size_t k : opt.k_list) {
      report.recall[k] += metrics::recall_at_k(ranked, tc.target, k);
      report.ndcg[k] += metrics::ndcg_at_k(ranked, tc.target, k);
    }
    report.per_case.push_back({tc.user_id, tc.item_id, ranked.rank_of(tc.target), explanation});
  }
  report.cases = cases.size();
  if (!cases.empty())
    for (std::size_t k : opt.k_list) {
      report.recall[k] /= double(cases.size());
      report.ndcg[k] /= double(cases.size());
    }
  return report;
}

}  // namespace SEQXREC_NS::eer
