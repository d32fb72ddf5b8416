#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seqxrec/seqrec.hpp"
#include "seqxrec/textembed.hpp"

namespace SEQXREC_NS::eer {

using num::ParamList;
using num::Tape;
using num::Tensor;

struct HyperConfig {
  std::size_t d_sem = 64;
  std::size_t hidden = 16;
  Real gamma = Real(0.1);
  // Block weights that receive deltas (any of wq, wk, wv, wo, ff1, ff2).
  std::vector<std::string> targets = {"ff1", "ff2"};
};

// One two-layer MLP per recommender layer, mapping an explanation embedding
// to the flattened deltas of that layer's target weights. The output layer
// starts at zero so every delta starts at zero.
class Hypernetwork {
 public:
  struct Layer {
    nn::Linear in, out;
    std::vector<num::Shape> shapes;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
  };

  HyperConfig config;
  std::vector<Layer> layers;

  static Hypernetwork init(const HyperConfig& config, const seqrec::SeqRecModel& base, std::uint64_t seed);
  // hyper.layer{l}.in.*, hyper.layer{l}.out.*
  ParamList parameters() const;
};

// (user_id, item_id) -> explanation text.
using ExplanationMap = std::map<std::pair<std::string, std::string>, std::string>;

Tensor encode_explanation(const text::SemanticEncoder& enc, const std::string& text);

// gamma * reshape(f_l(e)) per layer and target.
seqrec::LayerDeltas generate_adapters(Tape& tape, const Hypernetwork& hyper, const Tensor& e);
// Row b of E [B x d_sem] -> deltas for example b; one MLP pass per layer.
std::vector<seqrec::LayerDeltas> generate_adapters_batch(Tape& tape, const Hypernetwork& hyper, const Tensor& E);

std::vector<Real> score_conditioned(const seqrec::SeqRecModel& base, const Hypernetwork& hyper,
                                    const std::vector<std::size_t>& hist, const Tensor& e,
                                    const std::vector<std::size_t>& candidates);

struct EerExample {
  std::vector<std::size_t> hist;
  std::size_t target = 0;
  std::size_t negative = 0;
  Tensor e;  // [d_sem]
};

// Mean of -log sigmoid(score(target) - score(negative)) under each example's
// explanation-conditioned recommender.
Tensor eer_loss(Tape& tape, const seqrec::SeqRecModel& base, const Hypernetwork& hyper,
                const std::vector<const EerExample*>& batch);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double lr = 5e-4;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

// Jointly fine-tunes base and hyper on every training-split position t >= 1:
// history items[..t), target items[t], the ground-truth explanation of
// (user, items[t]) and a fresh uniform negative per epoch.
TrainResult train_eer(seqrec::SeqRecModel& base, Hypernetwork& hyper, const data::SplitDataset& split,
                      const ExplanationMap& ground_truth, const text::SemanticEncoder& enc, const TrainConfig& cfg,
                      const std::function<void(std::size_t, double)>& on_epoch = {});

enum class Condition { kGenerated, kGroundTruth, kRandom, kEmpty };
Condition parse_condition(const std::string& name);
std::string condition_name(Condition c);

// One held-out test interaction and every interaction before it.
struct TestCase {
  std::size_t user = 0;
  std::string user_id, item_id;
  std::size_t position = 0;  // index of the target in the user's full sequence
  std::vector<std::size_t> hist;
  std::size_t target = 0;
};

std::vector<TestCase> build_test_cases(const data::SplitDataset& split, std::size_t max_len);

// Throws unless hist is exactly the (truncated) prefix before the target.
void assert_no_leakage(const TestCase& tc, const std::vector<std::size_t>& full_sequence);

struct EvalOptions {
  std::vector<std::size_t> k_list = {5, 10};
  std::size_t max_len = 50;
  // Drop history items from the candidates (the target always stays).
  bool exclude_history = true;
  std::uint64_t seed = 0;
};

struct CaseResult {
  std::string user_id, item_id;
  std::size_t rank = 0;
  std::string explanation;
};

struct UtilityReport {
  Condition condition = Condition::kEmpty;
  std::size_t cases = 0;
  std::size_t leakage_checks = 0;
  std::map<std::size_t, double> recall, ndcg;
  std::vector<CaseResult> per_case;
};

// Explanation sources: ground truth and generated maps, plus the training-
// split texts that the random condition draws from.
struct ExplanationSources {
  const ExplanationMap* ground_truth = nullptr;
  const ExplanationMap* generated = nullptr;
  std::vector<std::string> random_pool;
};

UtilityReport evaluate_utility(const seqrec::SeqRecModel& base, const Hypernetwork& hyper,
                               const data::SplitDataset& split, Condition condition, const ExplanationSources& sources,
                               const text::SemanticEncoder& enc, const EvalOptions& opt = {});

}  // namespace SEQXREC_NS::eer
