#include "seqxrec/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "io.hpp"
#include "seqxrec/checkpoint.hpp"
#include "seqxrec/metrics.hpp"
#include "seqxrec/synthetic.hpp"

namespace SEQXREC_NS::pipeline {

void tune_allocator() {
#if defined(__GLIBC__)
  constexpr int kBytes = 32 << 20;
  mallopt(M_MMAP_THRESHOLD, kBytes);
  mallopt(M_TRIM_THRESHOLD, 2 * kBytes);
  mallopt(M_TOP_PAD, kBytes / 4);
#endif
}

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string eval_name(const std::string& condition, const std::string& ablation) {
  return ablation == "none" ? condition : condition + "_" + ablation;
}

std::string generated_name(const std::string& ablation) {
  return ablation == "none" ? "generated.jsonl" : "generated_" + ablation + ".jsonl";
}

data::DownsampleMode downsample_mode(const Config& cfg) {
  return cfg.data.downsample_mode == "keep" ? data::DownsampleMode::kKeep : data::DownsampleMode::kDrop;
}

std::map<std::string, std::string> stage_meta(const Config& cfg, const std::string& stage) {
  return {{"stage", stage}, {"config", cfg.dump()}, {"precision", kRealName}};
}

void write_lines(const std::string& path, const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  io::write_file_atomic(path, out);
}

eer::ExplanationMap load_generated(const std::string& path) {
  eer::ExplanationMap out;
  io::for_each_jsonl(path, [&](const json& j, std::size_t) {
    out[{j.at("user_id").get<std::string>(), j.at("item_id").get<std::string>()}] = j.at("text").get<std::string>();
  });
  return out;
}

seqrec::SeqRecConfig rec_config(const Config& cfg, std::size_t num_items) {
  return {num_items, cfg.rec.d, cfg.rec.layers, cfg.rec.heads, cfg.data.max_len};
}

seg::SegConfig seg_config(const Config& cfg) {
  seg::SegConfig s;
  moe::MoEConfig m;
  m.heads = cfg.moe.heads;
  m.layers = cfg.moe.layers;
  m.experts = cfg.moe.experts;
  m.max_len = cfg.data.max_len;
  m.dropout = cfg.moe.dropout;
  m.d_out = cfg.moe.d_out;
  m.fusion_identity = cfg.moe.fusion == "identity";
  s.rec_adapter = m;
  s.rec_adapter.d = cfg.rec.d;
  s.sem_adapter = m;
  s.sem_adapter.d = cfg.text.d_sem;
  s.max_cat_tokens = cfg.seg.max_cat_tokens;
  s.max_target_tokens = cfg.seg.max_target_tokens;
  return s;
}

eer::HyperConfig hyper_config(const Config& cfg) {
  return {cfg.text.d_sem, cfg.eer.hidden, Real(cfg.eer.gamma), cfg.eer.targets};
}

seg::LMConfig lm_config(const Config& cfg, std::size_t vocab) {
  return {vocab, cfg.lm.d, cfg.lm.layers, cfg.lm.heads, cfg.lm.ctx};
}

// Training-split ground-truth texts in user then position order.
std::vector<std::string> train_texts(const data::SplitDataset& split, const groundtruth::RecordMap& gt) {
  std::vector<std::string> out;
  for (const auto& seq : split.train)
    for (const auto& item : seq.items) out.push_back(gt.at({seq.user_id, item}).text());
  return out;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"prepare",  "pretrain-rec", "build-gt", "train-seg",
                                                 "train-eer", "generate",     "evaluate", "report"};
  return names;
}

std::uint64_t stage_seed(const Config& cfg, const std::string& stage) { return Rng(cfg.seed).derive(stage).next_u64(); }

Pipeline::Pipeline(Config config, std::string work_dir, std::ostream* log)
    : config_(std::move(config)), dir_(std::move(work_dir)), log_(log) {
  config_.validate();
}

std::string Pipeline::path(const std::string& artifact) const { return (fs::path(dir_) / artifact).string(); }

void Pipeline::require(const std::string& artifact, const std::string& stage) const {
  if (!fs::exists(path(artifact)))
    throw MissingArtifactError("missing " + path(artifact) + "; run the '" + stage + "' stage first");
}

void Pipeline::note(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

// ---- data ----

void Pipeline::prepare() {
  std::string interactions = config_.data.interactions, items = config_.data.items;
  if (config_.data.source == "synthetic") {
    write_synthetic(path("raw"), generate_synthetic(config_.synthetic));
    interactions = path("raw/interactions.jsonl");
    items = path("raw/items.jsonl");
  }
  const auto raw = data::load_interactions(interactions);
  const auto catalog = data::load_items(items);
  const auto kept = data::k_core_filter(raw, config_.data.kcore, config_.data.kcore_strict);
  if (kept.empty()) throw DomainError("prepare: no interactions survive " + std::to_string(config_.data.kcore) + "-core filtering");
  data::Catalog used;
  for (const auto& r : kept) {
    auto it = catalog.find(r.item_id);
    if (it == catalog.end()) throw DomainError("prepare: item " + r.item_id + " has no catalog entry");
    used.emplace(it->first, it->second);
  }
  fs::create_directories(path("prepared"));
  data::write_interactions(path("prepared/interactions.jsonl"), kept);
  data::write_items(path("prepared/items.jsonl"), used);
  const auto split = load_split();
  json summary = {{"raw_interactions", raw.size()},
                  {"kept_interactions", kept.size()},
                  {"users", split.num_users()},
                  {"items", split.items.num_items()},
                  {"train", split.count(split.train)},
                  {"validation", split.count(split.validation)},
                  {"test", split.count(split.test)},
                  {"cutoff_train", split.cutoff_train},
                  {"cutoff_val", split.cutoff_val},
                  {"dropped_users", split.dropped_users},
                  {"dropped_interactions", split.dropped_interactions}};
  io::write_file_atomic(path("prepare.json"), summary.dump(2) + "\n");
  note("prepare: " + std::to_string(split.num_users()) + " users, " + std::to_string(split.items.num_items()) +
       " items, " + std::to_string(kept.size()) + " interactions");
}

data::SplitDataset Pipeline::load_split() const {
  require("prepared/interactions.jsonl", "prepare");
  return data::chronological_split(
      data::load_interactions(path("prepared/interactions.jsonl")),
      {config_.data.split_train, config_.data.split_validation, config_.data.split_test});
}

data::Catalog Pipeline::load_catalog() const {
  require("prepared/items.jsonl", "prepare");
  return data::load_items(path("prepared/items.jsonl"));
}

text::Vocabulary Pipeline::load_vocab() const {
  require("vocab.txt", "build-gt");
  std::vector<std::string> tokens;
  std::istringstream in(io::read_file(path("vocab.txt")));
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return text::Vocabulary::from_tokens(std::move(tokens), config_.text.min_freq);
}

text::SemanticEncoder Pipeline::encoder() const {
  return text::SemanticEncoder::random(std::make_shared<const text::Vocabulary>(load_vocab()), config_.text.d_sem,
                                       stage_seed(config_, "text-encoder"));
}

seqrec::SeqRecModel Pipeline::load_rec(const std::string& checkpoint) const {
  require(checkpoint, checkpoint == "rec.ckpt" ? "pretrain-rec" : "train-eer");
  const auto ckpt = read_checkpoint(path(checkpoint));
  const auto split_items = ckpt.tensor("item_emb").dim(0) - 1;
  auto model = seqrec::SeqRecModel::init(rec_config(config_, split_items), 0);
  load_into(ckpt, model.parameters());
  return model;
}

groundtruth::RecordMap Pipeline::load_ground_truth() const {
  require("ground_truth.jsonl", "build-gt");
  return groundtruth::load_records(path("ground_truth.jsonl"));
}

// ---- recommender ----

void Pipeline::pretrain_rec() {
  const auto split = load_split();
  auto model = seqrec::SeqRecModel::init(rec_config(config_, split.items.num_items()), stage_seed(config_, "rec-init"));
  std::vector<json> curve;
  seqrec::pretrain(model, split,
                   {config_.rec.epochs, config_.rec.batch, config_.rec.lr, config_.rec.weight_decay,
                    stage_seed(config_, "pretrain-rec")},
                   [&](std::size_t epoch, double loss) {
                     curve.push_back({{"epoch", epoch}, {"loss", loss}});
                     note("pretrain-rec: epoch " + std::to_string(epoch + 1) + " loss " + fixed4(loss));
                   });
  save_checkpoint(path("rec.ckpt"), model.parameters(), stage_meta(config_, "pretrain-rec"));
  write_lines(path("logs/pretrain-rec.jsonl"), curve);
}

// ---- ground truth ----

void Pipeline::build_gt() {
  const auto split = load_split();
  const auto catalog = load_catalog();
  auto client = groundtruth::client_from_environment();
  groundtruth::BuildStats stats;
  const auto records = groundtruth::build_ground_truth(
      split, catalog, {stage_seed(config_, "build-gt"), config_.resolved_data_dir(), client.get()}, &stats);
  groundtruth::write_records(path("ground_truth.jsonl"), records);
  note("build-gt: " + std::to_string(stats.records) + " records, " + std::to_string(stats.external) + " external, " +
       std::to_string(stats.client_failures) + " client failures");

  std::vector<std::string> corpus = {io::read_file(config_.resolved_data_dir() + "/system_prompt.txt"), ","};
  for (const auto& [id, meta] : catalog) {
    corpus.push_back(data::build_item_description(meta));
    for (const auto& c : meta.categories) corpus.push_back(c);
  }
  for (auto& t : train_texts(split, records)) corpus.push_back(std::move(t));
  const auto vocab = text::Vocabulary::build(corpus, config_.text.min_freq);
  std::string out;
  for (const auto& tok : vocab.tokens()) out += tok + "\n";
  io::write_file_atomic(path("vocab.txt"), out);
}

// ---- generator ----

seg::SegContext Pipeline::seg_context(const seg::MicroLM& lm, const text::Vocabulary& vocab) const {
  seg::SegContext ctx;
  ctx.lm = &lm;
  ctx.vocab = &vocab;
  ctx.sys_ids = vocab.encode(io::read_file(config_.resolved_data_dir() + "/system_prompt.txt"));
  ctx.config = seg_config(config_);
  return ctx;
}

seg::SegExample Pipeline::seg_example(const data::SplitDataset& split, const data::Catalog& catalog,
                                      const data::CategoryStats& stats, const seqrec::SeqRecModel& base,
                                      const text::SemanticEncoder& enc, const data::UserSequence& full,
                                      std::size_t pos, const std::string& target_text) const {
  const std::size_t begin = pos + 1 > config_.data.max_len ? pos + 1 - config_.data.max_len : 0;
  data::UserSequence seq;
  seq.user_id = full.user_id;
  seq.items.assign(full.items.begin() + static_cast<std::ptrdiff_t>(begin), full.items.begin() + static_cast<std::ptrdiff_t>(pos + 1));
  seq.timestamps.assign(full.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        full.timestamps.begin() + static_cast<std::ptrdiff_t>(pos + 1));

  seg::SegExample ex;
  ex.user_id = full.user_id;
  ex.item_id = full.items[pos];
  num::Tape tape(num::Tape::Mode::kInference);
  ex.s_rec = seqrec::encode_sequence(tape, base, seqrec::dense_ids(split.items, seq.items));
  std::vector<std::string> descriptions;
  for (const auto& item : seq.items) descriptions.push_back(data::build_item_description(catalog.at(item)));
  ex.s_sem = enc.embed_sequence(descriptions);
  Rng rng = Rng(stage_seed(config_, "categories")).derive(ex.user_id + "/" + ex.item_id);
  const auto cats = data::sample_category_sequence(seq, catalog, stats, rng, config_.data.downsample_t,
                                                   downsample_mode(config_));
  ex.cat_ids = seg::category_ids(enc.vocab(), cats, config_.seg.max_cat_tokens);
  ex.target_ids = enc.vocab().encode(target_text);
  if (ex.target_ids.size() > config_.seg.max_target_tokens) ex.target_ids.resize(config_.seg.max_target_tokens);
  return ex;
}

void Pipeline::train_seg() {
  require("rec.ckpt", "pretrain-rec");
  const auto split = load_split();
  const auto catalog = load_catalog();
  const auto gt = load_ground_truth();
  const auto enc = encoder();
  const auto base = load_rec("rec.ckpt");
  const auto stats = data::build_category_stats(split, catalog);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t u = 0; u < split.num_users(); ++u)
    for (std::size_t t = 1; t < split.train[u].size(); ++t) pairs.emplace_back(u, t);
  if (config_.seg.max_train_pairs > 0 && pairs.size() > config_.seg.max_train_pairs) {
    Rng rng = Rng(stage_seed(config_, "seg-pairs"));
    rng.shuffle(pairs);
    pairs.resize(config_.seg.max_train_pairs);
    std::sort(pairs.begin(), pairs.end());
  }
  std::vector<seg::SegExample> examples;
  for (const auto& [u, t] : pairs) {
    const auto& seq = split.train[u];
    examples.push_back(seg_example(split, catalog, stats, base, enc, seq, t, gt.at({seq.user_id, seq.items[t]}).text()));
  }
  note("train-seg: " + std::to_string(examples.size()) + " training pairs");

  auto lm = seg::MicroLM::init(lm_config(config_, enc.vocab().size()), stage_seed(config_, "lm-init"));
  const auto ctx = seg_context(lm, enc.vocab());
  std::vector<json> curve;
  seg::pretrain_lm(lm, ctx, examples,
                   {config_.lm.pretrain_epochs, config_.lm.pretrain_batch, config_.lm.pretrain_lr, 0.0,
                    stage_seed(config_, "lm-pretrain")},
                   [&](std::size_t epoch, double loss) {
                     curve.push_back({{"phase", "lm"}, {"epoch", epoch}, {"loss", loss}});
                     note("train-seg: backbone epoch " + std::to_string(epoch + 1) + " loss " + fixed4(loss));
                   });
  auto model = seg::SegModel::init(ctx.config, config_.lm.d, stage_seed(config_, "seg-init"));
  const auto result = seg::train_seg(
      ctx, model, examples,
      {config_.seg.epochs, config_.seg.batch, config_.seg.lr, config_.seg.weight_decay, stage_seed(config_, "train-seg")},
      {}, [&](std::size_t epoch, double loss) {
        curve.push_back({{"phase", "seg"}, {"epoch", epoch}, {"loss", loss}});
        note("train-seg: epoch " + std::to_string(epoch + 1) + " loss " + fixed4(loss));
      });
  auto meta = stage_meta(config_, "train-seg");
  meta["backbone_hash"] = std::to_string(result.backbone_hash_after);
  save_checkpoint(path("lm.ckpt"), lm.parameters(), meta);
  save_checkpoint(path("seg.ckpt"), model.parameters(), meta);
  write_lines(path("logs/train-seg.jsonl"), curve);
}

void Pipeline::generate(const std::string& ablation_name) {
  require("seg.ckpt", "train-seg");
  require("lm.ckpt", "train-seg");
  const auto ablation = seg::Ablation::parse(ablation_name);
  const auto split = load_split();
  const auto catalog = load_catalog();
  const auto enc = encoder();
  const auto base = load_rec("rec.ckpt");
  const auto stats = data::build_category_stats(split, catalog);

  auto lm = seg::MicroLM::init(lm_config(config_, enc.vocab().size()), 0);
  load_into(read_checkpoint(path("lm.ckpt")), lm.parameters());
  lm.set_frozen(true);
  const auto ctx = seg_context(lm, enc.vocab());
  auto model = seg::SegModel::init(ctx.config, config_.lm.d, 0);
  load_into(read_checkpoint(path("seg.ckpt")), model.parameters());

  const seg::GenerateOptions opt{config_.seg.max_new_tokens, config_.seg.temperature, stage_seed(config_, "generate")};
  std::vector<json> rows;
  for (const auto& tc : eer::build_test_cases(split, config_.data.max_len)) {
    const auto full = split.full_sequence(tc.user);
    const auto ex = seg_example(split, catalog, stats, base, enc, full, tc.position, "");
    rows.push_back({{"user_id", tc.user_id}, {"item_id", tc.item_id}, {"text", seg::generate_explanation(ctx, model, ex, opt, ablation)}});
  }
  write_lines(path(generated_name(ablation_name)), rows);
  note("generate: " + std::to_string(rows.size()) + " explanations (" + ablation_name + ")");
}

// ---- explanation-enhanced recommender ----

void Pipeline::train_eer() {
  require("rec.ckpt", "pretrain-rec");
  const auto split = load_split();
  const auto gt = load_ground_truth();
  const auto enc = encoder();
  auto base = load_rec("rec.ckpt");
  auto hyper = eer::Hypernetwork::init(hyper_config(config_), base, stage_seed(config_, "hyper-init"));
  std::vector<json> curve;
  eer::train_eer(base, hyper, split, groundtruth::texts(gt), enc,
                 {config_.eer.epochs, config_.eer.batch, config_.eer.lr, config_.eer.weight_decay,
                  stage_seed(config_, "train-eer")},
                 [&](std::size_t epoch, double loss) {
                   curve.push_back({{"epoch", epoch}, {"loss", loss}});
                   note("train-eer: epoch " + std::to_string(epoch + 1) + " loss " + fixed4(loss));
                 });
  auto params = base.parameters();
  num::append(params, hyper.parameters());
  save_checkpoint(path("eer.ckpt"), params, stage_meta(config_, "train-eer"));
  write_lines(path("logs/train-eer.jsonl"), curve);
}

EvalSummary Pipeline::evaluate(eer::Condition condition, const std::string& ablation) {
  seg::Ablation::parse(ablation);
  if (ablation != "none" && condition != eer::Condition::kGenerated)
    throw ConfigError("--ablation applies only to --condition generated");
  require("eer.ckpt", "train-eer");
  const auto split = load_split();
  const auto gt = load_ground_truth();
  const auto gt_texts = groundtruth::texts(gt);
  const auto enc = encoder();
  const auto ckpt = read_checkpoint(path("eer.ckpt"));
  auto base = seqrec::SeqRecModel::init(rec_config(config_, split.items.num_items()), 0);
  load_into(ckpt, base.parameters());
  auto hyper = eer::Hypernetwork::init(hyper_config(config_), base, 0);
  load_into(ckpt, hyper.parameters());

  eer::ExplanationMap generated;
  eer::ExplanationSources sources;
  sources.ground_truth = &gt_texts;
  if (condition == eer::Condition::kGenerated) {
    require(generated_name(ablation), ablation == "none" ? "generate" : "generate --ablation " + ablation);
    generated = load_generated(path(generated_name(ablation)));
    sources.generated = &generated;
  }
  if (condition == eer::Condition::kRandom) sources.random_pool = train_texts(split, gt);

  eer::EvalOptions opt;
  opt.k_list = config_.eval.k;
  opt.max_len = config_.data.max_len;
  opt.exclude_history = config_.eval.exclude_history;
  opt.seed = stage_seed(config_, "evaluate");
  const auto report = eer::evaluate_utility(base, hyper, split, condition, sources, enc, opt);

  EvalSummary s;
  s.condition = eer::condition_name(condition);
  s.ablation = ablation;
  s.cases = report.cases;
  s.leakage_checks = report.leakage_checks;
  s.recall = report.recall;
  s.ndcg = report.ndcg;
  std::vector<json> cases;
  for (const auto& c : report.per_case) {
    json row = {{"user_id", c.user_id}, {"item_id", c.item_id}, {"rank", c.rank}, {"explanation", c.explanation}};
    if (condition == eer::Condition::kGenerated) {
      const std::string& ref = gt_texts.at({c.user_id, c.item_id});
      row["bleu"] = metrics::bleu(c.explanation, ref);
      row["embed_similarity"] = metrics::embed_similarity(enc, c.explanation, ref);
      s.bleu += row["bleu"].get<double>();
      s.embed_similarity += row["embed_similarity"].get<double>();
    }
    cases.push_back(std::move(row));
  }
  if (condition == eer::Condition::kGenerated && !cases.empty()) {
    s.has_text_metrics = true;
    s.bleu /= double(cases.size());
    s.embed_similarity /= double(cases.size());
  }
  fs::create_directories(path("eval"));
  write_lines(path("eval/" + eval_name(s.condition, ablation) + ".cases.jsonl"), cases);
  write_eval_summary(path("eval/" + eval_name(s.condition, ablation) + ".json"), s);
  std::string line = "evaluate: " + eval_name(s.condition, ablation) + " over " + std::to_string(s.cases) + " cases";
  for (std::size_t k : opt.k_list) line += ", Recall@" + std::to_string(k) + " " + fixed4(s.recall[k]);
  note(line);
  return s;
}

// ---- reporting ----

void write_eval_summary(const std::string& path, const EvalSummary& s) {
  json j = {{"condition", s.condition}, {"ablation", s.ablation}, {"cases", s.cases}, {"leakage_checks", s.leakage_checks}};
  for (const auto& [k, v] : s.recall) j["recall"][std::to_string(k)] = v;
  for (const auto& [k, v] : s.ndcg) j["ndcg"][std::to_string(k)] = v;
  if (s.has_text_metrics) {
    j["bleu"] = s.bleu;
    j["embed_similarity"] = s.embed_similarity;
  }
  io::write_file_atomic(path, j.dump(2) + "\n");
}

EvalSummary read_eval_summary(const std::string& path) {
  const auto j = json::parse(io::read_file(path));
  EvalSummary s;
  s.condition = j.at("condition").get<std::string>();
  s.ablation = j.at("ablation").get<std::string>();
  s.cases = j.at("cases").get<std::size_t>();
  s.leakage_checks = j.at("leakage_checks").get<std::size_t>();
  for (const auto& [k, v] : j.at("recall").items()) s.recall[std::stoul(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("ndcg").items()) s.ndcg[std::stoul(k)] = v.get<double>();
  if (j.contains("bleu")) {
    s.has_text_metrics = true;
    s.bleu = j.at("bleu").get<double>();
    s.embed_similarity = j.at("embed_similarity").get<double>();
  }
  return s;
}

std::string format_report(const std::vector<EvalSummary>& summaries, const std::vector<std::size_t>& k_list) {
  static const std::map<std::string, std::string> kConditionLabel = {
      {"random", "Random"}, {"empty", "Empty"}, {"generated", "Generated"}, {"ground_truth", "Ground truth"}};
  static const std::map<std::string, std::string> kAblationLabel = {
      {"none", "Full"}, {"wo_be", "w/o BE"}, {"wo_se", "w/o SE"}, {"wo_ct", "w/o CT"}, {"wo_de", "w/o DE"}};
  auto header = [&](const std::string& first) {
    char buf[64];
    std::string h;
    std::snprintf(buf, sizeof(buf), "%-14s", first.c_str());
    h += buf;
    for (std::size_t k : k_list) {
      std::snprintf(buf, sizeof(buf), " %10s", ("Recall@" + std::to_string(k)).c_str());
      h += buf;
    }
    for (std::size_t k : k_list) {
      std::snprintf(buf, sizeof(buf), " %10s", ("NDCG@" + std::to_string(k)).c_str());
      h += buf;
    }
    return h;
  };
  auto row = [&](const std::string& label, const EvalSummary& s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-14s", label.c_str());
    std::string r = buf;
    for (std::size_t k : k_list) {
      std::snprintf(buf, sizeof(buf), " %10.4f", s.recall.count(k) ? s.recall.at(k) : 0.0);
      r += buf;
    }
    for (std::size_t k : k_list) {
      std::snprintf(buf, sizeof(buf), " %10.4f", s.ndcg.count(k) ? s.ndcg.at(k) : 0.0);
      r += buf;
    }
    return r;
  };
  auto text_cols = [](const EvalSummary& s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %10.4f %10.4f", s.bleu, s.embed_similarity);
    return std::string(buf);
  };

  std::string out = "Explanation utility\n" + header("Method") + "\n";
  for (const char* c : {"random", "empty", "generated", "ground_truth"})
    for (const auto& s : summaries)
      if (s.condition == c && s.ablation == "none") out += row(kConditionLabel.at(c), s) + "\n";

  bool quality = false;
  for (const auto& s : summaries) quality |= s.has_text_metrics && s.ablation == "none";
  if (quality) {
    out += "\nExplanation quality\n";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-14s %10s %10s\n", "Method", "BLEU", "EmbedSim");
    out += buf;
    for (const auto& s : summaries)
      if (s.has_text_metrics && s.ablation == "none") {
        std::snprintf(buf, sizeof(buf), "%-14s", "Generated");
        out += buf + text_cols(s) + "\n";
      }
  }

  bool ablations = false;
  for (const auto& s : summaries) ablations |= s.ablation != "none";
  if (ablations) {
    out += "\nAblation (generated explanations)\n" + header("Variant");
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %10s %10s\n", "BLEU", "EmbedSim");
    out += buf;
    for (const char* a : {"none", "wo_be", "wo_se", "wo_ct", "wo_de"})
      for (const auto& s : summaries)
        if (s.condition == "generated" && s.ablation == a) out += row(kAblationLabel.at(a), s) + text_cols(s) + "\n";
  }
  return out;
}

void Pipeline::report() {
  if (!fs::exists(path("eval"))) throw MissingArtifactError("no evaluations in " + path("eval") + "; run the 'evaluate' stage first");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(path("eval"))) {
    const auto name = entry.path().filename().string();
    if (name.size() > 5 && name.substr(name.size() - 5) == ".json") files.push_back(entry.path().string());
  }
  if (files.empty()) throw MissingArtifactError("no evaluations in " + path("eval") + "; run the 'evaluate' stage first");
  std::sort(files.begin(), files.end());
  std::vector<EvalSummary> summaries;
  std::vector<json> records;
  for (const auto& f : files) {
    summaries.push_back(read_eval_summary(f));
    records.push_back(json::parse(io::read_file(f)));
  }
  io::write_file_atomic(path("report.txt"), format_report(summaries, config_.eval.k));
  write_lines(path("report.jsonl"), records);
  note("report: " + path("report.txt"));
}

void Pipeline::run(const std::string& stage, const std::string& condition, const std::string& ablation) {
  if (stage == "prepare") prepare();
  else if (stage == "pretrain-rec") pretrain_rec();
  else if (stage == "build-gt") build_gt();
  else if (stage == "train-seg") train_seg();
  else if (stage == "train-eer") train_eer();
  else if (stage == "generate") generate(ablation);
  else if (stage == "evaluate") evaluate(eer::parse_condition(condition.empty() ? "generated" : condition), ablation);
  else if (stage == "report") report();
  else throw ConfigError("unknown stage '" + stage + "'");
}

}  // namespace SEQXREC_NS::pipeline
