#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "seqxrec/config.hpp"
#include "seqxrec/eer.hpp"
#include "seqxrec/groundtruth.hpp"
#include "seqxrec/seg.hpp"

namespace SEQXREC_NS::pipeline {

// Keeps large training buffers in the heap between steps instead of mapping
// and unmapping them on every allocation. Call once at program start.
void tune_allocator();

// Stage names in execution order.
const std::vector<std::string>& stage_names();

// Seed of a named stage, derived from the config seed.
std::uint64_t stage_seed(const Config& cfg, const std::string& stage);

struct EvalSummary {
  std::string condition;
  std::string ablation = "none";
  std::size_t cases = 0;
  std::size_t leakage_checks = 0;
  std::map<std::size_t, double> recall, ndcg;
  // Text metrics against the ground truth; only set for generated explanations.
  bool has_text_metrics = false;
  double bleu = 0, embed_similarity = 0;
};

// Artifacts of one run live in a work directory:
//   prepared/interactions.jsonl, prepared/items.jsonl, prepare.json
//   rec.ckpt, ground_truth.jsonl, vocab.txt, lm.ckpt, seg.ckpt, eer.ckpt
//   generated[_<ablation>].jsonl, eval/<condition>[_<ablation>].json, report.txt, report.jsonl
// Every file is written atomically and depends only on the config and inputs.
class Pipeline {
 public:
  Pipeline(Config config, std::string work_dir, std::ostream* log = nullptr);

  const Config& config() const { return config_; }
  std::string path(const std::string& artifact) const;

  void prepare();
  void pretrain_rec();
  void build_gt();
  void train_seg();
  void train_eer();
  void generate(const std::string& ablation = "none");
  EvalSummary evaluate(eer::Condition condition, const std::string& ablation = "none");
  void report();

  // Runs a stage by its command-line name.
  void run(const std::string& stage, const std::string& condition = "", const std::string& ablation = "none");

  data::SplitDataset load_split() const;
  data::Catalog load_catalog() const;
  text::Vocabulary load_vocab() const;
  text::SemanticEncoder encoder() const;
  seqrec::SeqRecModel load_rec(const std::string& checkpoint) const;
  groundtruth::RecordMap load_ground_truth() const;

  // SEG inputs for the sequence user.items[0..=pos], truncated to max_len.
  seg::SegExample seg_example(const data::SplitDataset& split, const data::Catalog& catalog,
                              const data::CategoryStats& stats, const seqrec::SeqRecModel& base,
                              const text::SemanticEncoder& enc, const data::UserSequence& full, std::size_t pos,
                              const std::string& target_text) const;
  seg::SegContext seg_context(const seg::MicroLM& lm, const text::Vocabulary& vocab) const;

 private:
  void require(const std::string& artifact, const std::string& stage) const;
  void note(const std::string& line) const;

  Config config_;
  std::string dir_;
  std::ostream* log_;
};

void write_eval_summary(const std::string& path, const EvalSummary& s);
EvalSummary read_eval_summary(const std::string& path);

// Table-shaped text report over the summaries found in eval/.
std::string format_report(const std::vector<EvalSummary>& summaries, const std::vector<std::size_t>& k_list);

}  // namespace SEQXREC_NS::pipeline
