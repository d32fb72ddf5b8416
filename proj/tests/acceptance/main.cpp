#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "../../vendor/CLI11.hpp"
#include "../support/fixtures.hpp"
#include "checks.hpp"
#include "seqxrec/checkpoint.hpp"
#include "seqxrec/config.hpp"
#include "seqxrec/metrics.hpp"
#include "seqxrec/pipeline.hpp"

using namespace seqxrec;
using acceptance::CheckResult;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr std::size_t kMetricCases = 1000;
constexpr double kBleuTolerance = 1e-9;
constexpr double kDownsampleTolerance = 1e-12;
constexpr std::size_t kMonteCarloTrials = 100000;
constexpr double kMonteCarloTolerance = 0.01;
constexpr std::size_t kSignalSeeds = 5;
constexpr std::size_t kSignalK = 10;
constexpr double kNoiseStandardErrors = 2.0;
constexpr double kFullRunBudgetSeconds = 900.0;
constexpr std::size_t kCorpusSize = 50;
constexpr std::size_t kSmoothingWindow = 5;

// Criteria expected to fail at this scale; they still print FAIL.
const std::set<int> kKnownFailures = {6};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Runs {
  std::string root;
  std::ostream* log = nullptr;
  std::vector<std::pair<std::string, pipeline::Config>> dirs;
  std::vector<pipeline::EvalSummary> summaries;

  pipeline::Config load(const std::string& name) const {
    auto cfg = pipeline::load_config(std::string(SEQXREC_CONFIG_DIR) + "/" + name);
    cfg.data_dir = SEQXREC_TEST_DATA_DIR;
    return cfg;
  }

  pipeline::Pipeline make(const pipeline::Config& cfg, const std::string& leaf) {
    const std::string dir = root + "/" + leaf;
    fs::remove_all(dir);
    dirs.emplace_back(dir, cfg);
    return pipeline::Pipeline(cfg, dir, log);
  }

  pipeline::EvalSummary evaluate(pipeline::Pipeline& p, eer::Condition c, const std::string& ablation = "none") {
    summaries.push_back(p.evaluate(c, ablation));
    return summaries.back();
  }
};

CheckResult metric_oracles() {
  Rng rng(17);
  std::size_t mismatches = 0;
  for (std::size_t trial = 0; trial < kMetricCases; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<std::size_t> ids(n);
    std::vector<Real> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      ids[i] = 1 + i * 3 + rng.below(3);
      scores[i] = static_cast<Real>(rng.below(8));
    }
    const std::size_t target = ids[rng.below(n)];
    const std::size_t k = 1 + rng.below(12);
    Real ts = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (ids[i] == target) ts = scores[i];
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < n; ++i) ahead += scores[i] > ts || (scores[i] == ts && ids[i] < target);
    const double recall = ahead < k ? 1.0 : 0.0;
    const double ndcg = ahead < k ? 1.0 / std::log2(double(ahead) + 2.0) : 0.0;
    const metrics::RankedList r(ids, scores);
    mismatches += metrics::recall_at_k(r, target, k) != recall || metrics::ndcg_at_k(r, target, k) != ndcg;
  }
  const metrics::RankedList six({1, 2, 3, 4, 5, 6}, {6, 5, 4, 3, 2, 1});
  const double ndcg35 = metrics::ndcg_at_k(six, 3, 5);
  const double same = metrics::bleu("the cat sat on the mat", "the cat sat on the mat");
  const double hand = metrics::bleu("the cat sat on the mat", "the cat is on the mat");
  const double hand_oracle = 0.4204482076268573;
  const bool pass = mismatches == 0 && ndcg35 == 0.5 && same == 1.0 && std::abs(hand - hand_oracle) < kBleuTolerance;
  return {pass, std::to_string(mismatches) + " mismatches in " + std::to_string(kMetricCases) +
                    " cases, ndcg(3,5) " + fmt("%.17g", ndcg35) + ", bleu identical " + fmt("%.17g", same) +
                    ", hand case error " + fmt("%.2e", std::abs(hand - hand_oracle))};
}

CheckResult downsampling() {
  double worst = 0;
  for (double t : {1e-5, 1e-4, 1e-3, 1e-2, 0.1}) {
    for (int e = 0; e <= 70; ++e) {
      const double freq = std::pow(10.0, -7.0 + e * 0.1);
      if (freq > 1.0) break;
      const double expect = freq > t ? 1.0 - std::sqrt(t / freq) : 1.0;
      worst = std::max(worst, std::abs(data::downsample_probability(freq, t) - expect));
    }
  }
  data::Catalog catalog;
  catalog["x"] = data::ItemMeta{"x", {"A", "B", "C"}, {}};
  data::CategoryStats stats;
  stats.frequency = {{"A", 0.05}, {"B", 0.4}, {"C", 0.9}};
  const data::UserSequence seq{"u", {"x"}, {0}};
  const double t = 0.1;
  double worst_mc = 0;
  for (auto mode : {data::DownsampleMode::kDrop, data::DownsampleMode::kKeep}) {
    Rng rng(21);
    std::map<std::string, std::size_t> kept;
    for (std::size_t i = 0; i < kMonteCarloTrials; ++i)
      for (const auto& c : data::sample_category_sequence(seq, catalog, stats, rng, t, mode)) ++kept[c];
    for (const auto& [cat, f] : stats.frequency)
      worst_mc = std::max(worst_mc, std::abs(double(kept[cat]) / double(kMonteCarloTrials) -
                                             data::keep_probability(f, t, mode)));
  }
  return {worst <= kDownsampleTolerance && worst_mc <= kMonteCarloTolerance,
          "formula error " + fmt("%.2e", worst) + ", Monte-Carlo error " + fmt("%.4f", worst_mc) + " at " +
              std::to_string(kMonteCarloTrials) + " trials"};
}

std::string split_violation(const data::SplitDataset& split) {
  std::int64_t max_train = INT64_MIN, min_val = INT64_MAX, min_test = INT64_MAX;
  for (std::size_t u = 0; u < split.num_users(); ++u) {
    for (auto t : split.train[u].timestamps) max_train = std::max(max_train, t);
    for (auto t : split.validation[u].timestamps) min_val = std::min(min_val, t);
    for (auto t : split.test[u].timestamps) min_test = std::min(min_test, t);
  }
  if (max_train > min_val || min_val > min_test)
    return "train " + std::to_string(max_train) + " val " + std::to_string(min_val) + " test " +
           std::to_string(min_test);
  return "";
}

std::size_t structural_leakage_checks(const data::SplitDataset& split, std::size_t max_len) {
  std::size_t checked = 0;
  for (const auto& tc : eer::build_test_cases(split, max_len)) {
    std::vector<std::size_t> full;
    for (const auto& item : split.full_sequence(tc.user).items) full.push_back(split.items.id(item));
    eer::assert_no_leakage(tc, full);
    ++checked;
  }
  return checked;
}

CheckResult protocol_integrity(Runs& runs) {
  std::string problems;
  std::size_t splits = 0, structural = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    pipeline::SyntheticSpec spec;
    spec.users = 20 + seed * 7;
    spec.items = 30 + seed * 11;
    spec.categories = 2 + seed % 9;
    spec.seed = seed;
    const auto split = data::chronological_split(pipeline::generate_synthetic(spec).interactions);
    const auto v = split_violation(split);
    if (!v.empty()) problems += " synthetic seed " + std::to_string(seed) + ": " + v;
    ++splits;
  }
  for (const auto& [dir, cfg] : runs.dirs) {
    pipeline::Pipeline p(cfg, dir);
    const auto split = p.load_split();
    const auto v = split_violation(split);
    if (!v.empty()) problems += " " + dir + ": " + v;
    structural += structural_leakage_checks(split, p.config().data.max_len);
    ++splits;
  }
  std::size_t evaluated = 0;
  for (const auto& s : runs.summaries) {
    if (s.leakage_checks != s.cases || s.cases == 0) problems += " " + s.condition + " skipped leakage checks";
    evaluated += s.cases;
  }

  auto s = fixtures::tiny_seg({"bars | drinks", "food | a quick bite", "bars | late"}, 14);
  const auto before = num::hash_parameters(s.lm.parameters());
  const auto res = seg::train_seg(s.ctx(), s.model, s.examples, {2, 2, 1e-2, 0.0, 1});
  const bool backbone = res.backbone_hash_before == before && res.backbone_hash_after == before &&
                        num::hash_parameters(s.lm.parameters()) == before;
  if (!backbone) problems += " backbone changed by train_seg";
  for (const auto& [dir, cfg] : runs.dirs) {
    if (!fs::exists(dir + "/lm.ckpt")) continue;
    pipeline::Pipeline p(cfg, dir);
    const auto ckpt = pipeline::read_checkpoint(dir + "/lm.ckpt");
    auto lm = seg::MicroLM::init(
        {p.load_vocab().size(), p.config().lm.d, p.config().lm.layers, p.config().lm.heads, p.config().lm.ctx}, 0);
    pipeline::load_into(ckpt, lm.parameters());
    if (std::to_string(num::hash_parameters(lm.parameters())) != ckpt.meta.at("backbone_hash"))
      problems += " " + dir + " backbone hash mismatch";
  }
  return {problems.empty(), std::to_string(splits) + " splits ordered, " + std::to_string(structural) +
                                " structural and " + std::to_string(evaluated) + " evaluated leakage checks" +
                                (problems.empty() ? "" : ";" + problems)};
}

CheckResult signal_recovery(Runs& runs) {
  std::vector<double> gt, empty, random;
  double slowest = 0;
  std::size_t cases = 0;
  for (std::size_t seed = 0; seed < kSignalSeeds; ++seed) {
    auto cfg = runs.load("synthetic.conf");
    cfg.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    auto p = runs.make(cfg, "signal_" + std::to_string(seed));
    for (const char* stage : {"prepare", "pretrain-rec", "build-gt", "train-eer"}) p.run(stage);
    gt.push_back(runs.evaluate(p, eer::Condition::kGroundTruth).recall.at(kSignalK));
    empty.push_back(runs.evaluate(p, eer::Condition::kEmpty).recall.at(kSignalK));
    const auto r = runs.evaluate(p, eer::Condition::kRandom);
    random.push_back(r.recall.at(kSignalK));
    cases = r.cases;
    slowest = std::max(slowest, seconds_since(start));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m_gt = median(gt), m_empty = median(empty), m_random = median(random);
  const double n = double(cases);
  const double noise = kNoiseStandardErrors * std::sqrt(m_empty * (1 - m_empty) / n + m_random * (1 - m_random) / n);
  const bool pass = m_gt > m_empty && m_empty <= m_random + noise && slowest < kFullRunBudgetSeconds;
  return {pass, "median Recall@" + std::to_string(kSignalK) + " ground truth " + fmt("%.4f", m_gt) + ", empty " +
                    fmt("%.4f", m_empty) + ", random " + fmt("%.4f", m_random) + ", noise " + fmt("%.4f", noise) +
                    " over " + std::to_string(cases) + " cases, slowest run " + fmt("%.0f", slowest) + " s"};
}

fixtures::TinySeg corpus_generator(const std::vector<std::string>& corpus, std::uint64_t seed) {
  auto s = fixtures::tiny_seg(corpus, seed, 32, 2);
  seg::pretrain_lm(s.lm, s.ctx(), s.examples, {20, 8, 3e-3, 0.0, seed});
  return s;
}

CheckResult seg_learnability() {
  const auto corpus = fixtures::explanation_corpus(kCorpusSize, 3);
  auto s = corpus_generator(corpus, 5);
  const auto res = seg::train_seg(s.ctx(), s.model, s.examples, {20, 8, 3e-3, 0.0, 6});
  std::vector<double> smooth;
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    const std::size_t from = e + 1 >= kSmoothingWindow ? e + 1 - kSmoothingWindow : 0;
    double total = 0;
    for (std::size_t i = from; i <= e; ++i) total += res.epoch_loss[i];
    smooth.push_back(total / double(e + 1 - from));
  }
  std::size_t rises = 0;
  for (std::size_t e = 1; e < smooth.size(); ++e) rises += smooth[e] > smooth[e - 1];

  const std::vector<std::string> one = {corpus[7]};
  auto single = corpus_generator(one, 8);
  seg::train_seg(single.ctx(), single.model, single.examples, {60, 1, 3e-3, 0.0, 9});
  const auto target = single.vocab->decode(single.examples[0].target_ids);
  const auto out = seg::generate_explanation(single.ctx(), single.model, single.examples[0], {64, 0.0, 0});
  const bool verbatim = out == target;
  return {rises == 0 && verbatim,
          "smoothed loss " + fmt("%.4f", smooth.front()) + " to " + fmt("%.4f", smooth.back()) + " with " +
              std::to_string(rises) + " rises over " + std::to_string(smooth.size()) + " epochs, overfit output " +
              (verbatim ? "verbatim" : "'" + out + "' vs '" + target + "'")};
}

const std::vector<std::string> kAblations = {"wo_be", "wo_se", "wo_ct", "wo_de"};

void full_smoke_run(Runs& runs, const std::string& leaf) {
  auto p = runs.make(runs.load("smoke.conf"), leaf);
  for (const char* stage : {"prepare", "pretrain-rec", "build-gt", "train-seg", "train-eer", "generate"}) p.run(stage);
  for (auto c : {eer::Condition::kRandom, eer::Condition::kEmpty, eer::Condition::kGenerated,
                 eer::Condition::kGroundTruth})
    runs.evaluate(p, c);
  for (const auto& a : kAblations) {
    p.generate(a);
    runs.evaluate(p, eer::Condition::kGenerated, a);
  }
  p.report();
}

CheckResult ablation_harness(Runs& runs) {
  const std::string dir = runs.root + "/smoke_a";
  std::string missing;
  const std::string report = fs::exists(dir + "/report.txt") ? read_file(dir + "/report.txt") : "";
  for (const char* label : {"w/o BE", "w/o SE", "w/o CT", "w/o DE"})
    if (report.find(label) == std::string::npos) missing += std::string(" ") + label;
  std::size_t evaluated = 0;
  for (const auto& a : kAblations) evaluated += fs::exists(dir + "/eval/generated_" + a + ".json");
  return {missing.empty() && evaluated == kAblations.size(),
          std::to_string(evaluated) + " of 4 ablations evaluated" + (missing.empty() ? ", all in report" : ", missing" + missing)};
}

CheckResult determinism(Runs& runs) {
  std::string problems;
  const std::string a = runs.root + "/smoke_a", b = runs.root + "/smoke_b";
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a).string();
    if (!fs::exists(b + "/" + rel)) {
      problems += " missing " + rel;
    } else if (read_file(entry.path().string()) != read_file(b + "/" + rel)) {
      problems += " differs " + rel;
    }
    ++compared;
  }
  const bool reports = fs::exists(a + "/report.txt") && read_file(a + "/report.txt") == read_file(b + "/report.txt") &&
                       read_file(a + "/report.jsonl") == read_file(b + "/report.jsonl");
  if (!reports) problems += " reports differ";

  const auto model = fixtures::tiny_rec(1);
  const std::string ckpt = runs.root + "/roundtrip.ckpt";
  pipeline::save_checkpoint(ckpt, model.parameters());
  auto other = fixtures::tiny_rec(2);
  pipeline::load_into(pipeline::read_checkpoint(ckpt), other.parameters());
  if (num::hash_parameters(other.parameters()) != num::hash_parameters(model.parameters()))
    problems += " checkpoint round trip not bit-exact";

  const std::string good = read_file(ckpt);
  std::size_t rejected = 0, attempts = 0;
  auto corrupt = [&](std::string bytes) {
    {
      std::ofstream out(ckpt, std::ios::binary | std::ios::trunc);
      out << bytes;
    }
    ++attempts;
    try {
      pipeline::read_checkpoint(ckpt);
    } catch (const pipeline::CheckpointError&) {
      ++rejected;
    }
  };
  Rng rng(5);
  for (int i = 0; i < 32; ++i) {
    std::string flipped = good;
    flipped[rng.below(good.size())] ^= static_cast<char>(1u << rng.below(8));
    corrupt(flipped);
  }
  corrupt(good.substr(0, good.size() / 2));
  corrupt(good + "x");
  if (rejected != attempts) problems += " accepted " + std::to_string(attempts - rejected) + " corrupted checkpoints";
  return {problems.empty(), std::to_string(compared) + " artifacts compared across two runs, " +
                                std::to_string(rejected) + " of " + std::to_string(attempts) +
                                " corrupted checkpoints rejected" + (problems.empty() ? "" : ";" + problems)};
}

}  // namespace

int main(int argc, char** argv) {
  pipeline::tune_allocator();
  ::unsetenv("SEQXREC_LLM_ENDPOINT");
  ::unsetenv("SEQXREC_LLM_API_KEY");
  CLI::App app{"Acceptance suite: prints one PASS or FAIL line per criterion."};
  std::vector<int> only;
  std::string work_dir = (fs::temp_directory_path() / "seqxrec_acceptance").string();
  bool verbose = false, keep = false;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--work-dir", work_dir, "Directory for pipeline runs");
  app.add_flag("--verbose", verbose, "Log pipeline progress to stderr");
  app.add_flag("--keep", keep, "Keep the work directory");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  Runs runs;
  runs.root = work_dir;
  runs.log = verbose ? &std::cerr : nullptr;
  fs::remove_all(work_dir);
  fs::create_directories(work_dir);

  const std::map<int, std::string> names = {
      {1, "gradient correctness"}, {2, "ablation identities"},   {3, "metric oracles"},
      {4, "downsampling"},         {5, "protocol integrity"},    {6, "signal recovery"},
      {7, "SEG learnability"},     {8, "determinism and persistence"}, {9, "ablation harness"}};
  std::map<int, CheckResult> results;
  auto run = [&](int c, const std::function<CheckResult()>& f) {
    if (!wanted(c)) return;
    const auto start = std::chrono::steady_clock::now();
    try {
      results[c] = f();
    } catch (const std::exception& e) {
      results[c] = {false, std::string("error: ") + e.what()};
    }
    if (verbose) std::cerr << "criterion " << c << " took " << fmt("%.1f", seconds_since(start)) << " s\n";
  };

  run(1, acceptance::gradient_correctness);
  run(2, acceptance::ablation_identities);
  run(3, metric_oracles);
  run(4, downsampling);
  run(7, seg_learnability);
  if (wanted(5) || wanted(8) || wanted(9)) {
    run(9, [&] {
      full_smoke_run(runs, "smoke_a");
      return ablation_harness(runs);
    });
  }
  run(8, [&] {
    if (!fs::exists(runs.root + "/smoke_a")) full_smoke_run(runs, "smoke_a");
    full_smoke_run(runs, "smoke_b");
    return determinism(runs);
  });
  run(6, [&] { return signal_recovery(runs); });
  run(5, [&] { return protocol_integrity(runs); });

  int unexpected = 0;
  for (const auto& [c, r] : results) {
    const bool known = !r.pass && kKnownFailures.count(c);
    unexpected += !r.pass && !known;
    std::cout << "criterion " << c << " " << (r.pass ? "PASS" : known ? "FAIL (known)" : "FAIL") << " "
              << names.at(c) << ": " << r.detail << std::endl;
  }
  if (!keep) fs::remove_all(work_dir);
  return unexpected == 0 ? 0 : 1;
}
