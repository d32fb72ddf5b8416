#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>

#include "seqxrec/data.hpp"

using namespace seqxrec;
using namespace seqxrec::data;

namespace {

// Fixed 40-row stream; indices are the timestamps.
std::vector<RawInteraction> kcore_fixture() {
  const std::vector<std::pair<int, int>> rows = {
      {4, 5}, {0, 7}, {3, 0}, {2, 1}, {5, 7}, {3, 6}, {1, 9}, {3, 0}, {3, 6}, {4, 2}, {6, 2}, {1, 2}, {7, 2}, {2, 0},
      {0, 3}, {3, 2}, {2, 4}, {5, 3}, {3, 2}, {3, 6}, {4, 0}, {5, 6}, {2, 2}, {4, 1}, {5, 4}, {0, 9}, {5, 1}, {4, 5},
      {4, 7}, {5, 2}, {7, 7}, {2, 0}, {4, 0}, {5, 6}, {0, 8}, {6, 5}, {6, 9}, {0, 7}, {0, 2}, {3, 1}};
  std::vector<RawInteraction> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.push_back({"u" + std::to_string(rows[i].first), "i" + std::to_string(rows[i].second),
                   static_cast<std::int64_t>(i)});
  return out;
}

std::vector<std::int64_t> timestamps(const std::vector<RawInteraction>& rows) {
  std::vector<std::int64_t> out;
  for (const auto& r : rows) out.push_back(r.timestamp);
  return out;
}

// Fixed-point removal written independently of the library.
std::vector<RawInteraction> brute_force_core(std::vector<RawInteraction> rows, std::size_t need) {
  for (;;) {
    std::map<std::string, std::size_t> u, i;
    for (const auto& r : rows) ++u[r.user_id], ++i[r.item_id];
    std::vector<RawInteraction> next;
    for (const auto& r : rows)
      if (u[r.user_id] >= need && i[r.item_id] >= need) next.push_back(r);
    if (next.size() == rows.size()) return next;
    rows = std::move(next);
  }
}

}  // namespace

TEST(KCore, MatchesFrozenOracle) {
  const auto rows = kcore_fixture();
  EXPECT_EQ(timestamps(k_core_filter(rows, 3)),
            (std::vector<std::int64_t>{1, 2, 3, 4, 5, 7, 8, 9, 13, 15, 18, 19, 20, 21, 22, 23, 26, 28, 29, 31, 32, 33,
                                       37, 38, 39}));
  const std::vector<std::int64_t> four = {2, 3, 5, 7, 8, 9, 13, 15, 18, 19, 20, 21, 22, 23, 26, 29, 31, 32, 33, 39};
  EXPECT_EQ(timestamps(k_core_filter(rows, 4)), four);
  EXPECT_EQ(timestamps(k_core_filter(rows, 3, true)), four);
  EXPECT_TRUE(k_core_filter(rows, 5).empty());
}

TEST(KCore, RandomStreamsMatchBruteForceAndAreFixedPoints) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RawInteraction> rows;
    const std::size_t n = 20 + rng.below(200);
    for (std::size_t i = 0; i < n; ++i)
      rows.push_back({"u" + std::to_string(rng.below(15)), "i" + std::to_string(rng.below(20)),
                      static_cast<std::int64_t>(i)});
    const std::size_t k = 1 + rng.below(6);
    const auto got = k_core_filter(rows, k);
    EXPECT_EQ(timestamps(got), timestamps(brute_force_core(rows, k)));
    EXPECT_EQ(timestamps(k_core_filter(got, k)), timestamps(got));
  }
  EXPECT_THROW(k_core_filter(kcore_fixture(), 0), DomainError);
}

TEST(Split, ChronologicalAndUserAligned) {
  Rng rng(11);
  std::vector<RawInteraction> rows;
  for (int i = 0; i < 500; ++i)
    rows.push_back({"u" + std::to_string(rng.below(20)), "i" + std::to_string(rng.below(40)),
                    static_cast<std::int64_t>(rng.below(100000))});
  const auto split = chronological_split(rows);
  std::int64_t max_train = INT64_MIN, min_val = INT64_MAX, min_test = INT64_MAX;
  std::size_t total = 0;
  for (std::size_t u = 0; u < split.num_users(); ++u) {
    for (auto t : split.train[u].timestamps) max_train = std::max(max_train, t);
    for (auto t : split.validation[u].timestamps) min_val = std::min(min_val, t);
    for (auto t : split.test[u].timestamps) min_test = std::min(min_test, t);
    EXPECT_EQ(split.train[u].user_id, split.test[u].user_id);
    const auto full = split.full_sequence(u);
    EXPECT_TRUE(std::is_sorted(full.timestamps.begin(), full.timestamps.end()));
    total += full.size();
  }
  EXPECT_EQ(total + split.dropped_interactions, rows.size());
  EXPECT_LE(max_train, min_val);
  EXPECT_LE(min_val, min_test);
  EXPECT_NEAR(double(split.count(split.train)) / double(rows.size()), 0.8, 0.05);
  EXPECT_THROW(chronological_split({}), DomainError);
}

TEST(ItemIndex, DenseIdsStartAtOne) {
  ItemIndex index({"a", "b", "c"});
  EXPECT_EQ(index.num_items(), 3u);
  EXPECT_EQ(index.id("a"), 1u);
  EXPECT_EQ(index.id("c"), 3u);
  EXPECT_EQ(index.name(2), "b");
  EXPECT_FALSE(index.contains("z"));
  EXPECT_THROW(index.id("z"), Error);
}

TEST(Truncate, KeepsTheMostRecentItems) {
  UserSequence s{"u", {"a", "b", "c", "d"}, {1, 2, 3, 4}};
  const auto t = truncate_sequence(s, 2);
  EXPECT_EQ(t.items, (std::vector<std::string>{"c", "d"}));
  EXPECT_EQ(t.timestamps, (std::vector<std::int64_t>{3, 4}));
  EXPECT_EQ(truncate_sequence(s, 10).items, s.items);
  EXPECT_THROW(truncate_sequence(s, 0), DomainError);
}

TEST(Downsample, MatchesFormulaOnLogGrid) {
  for (double t : {1e-5, 1e-3, 0.05}) {
    for (int e = 0; e <= 60; ++e) {
      const double freq = std::pow(10.0, -6.0 + e * 0.1);
      if (freq > 1.0) break;
      const double p = downsample_probability(freq, t);
      if (freq > t)
        EXPECT_NEAR(p, 1.0 - std::sqrt(t / freq), 1e-12);
      else
        EXPECT_EQ(p, 1.0);
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
  EXPECT_THROW(downsample_probability(0.0), DomainError);
  EXPECT_THROW(downsample_probability(0.5, -1.0), DomainError);
}

TEST(Downsample, MonteCarloRetentionMatchesAnalytic) {
  Catalog catalog;
  catalog["x"] = ItemMeta{"x", {"A", "B"}, {}};
  CategoryStats stats;
  stats.frequency = {{"A", 0.4}, {"B", 0.9}};
  const UserSequence seq{"u", {"x"}, {0}};
  const double t = 0.1;
  for (auto mode : {DownsampleMode::kDrop, DownsampleMode::kKeep}) {
    Rng rng(21);
    std::map<std::string, std::size_t> kept;
    const std::size_t trials = 100000;
    for (std::size_t i = 0; i < trials; ++i)
      for (const auto& c : sample_category_sequence(seq, catalog, stats, rng, t, mode)) ++kept[c];
    for (const auto& [cat, f] : stats.frequency) {
      const double analytic = keep_probability(f, t, mode);
      const double expect = mode == DownsampleMode::kDrop ? std::sqrt(t / f) : 1.0 - std::sqrt(t / f);
      EXPECT_NEAR(analytic, expect, 1e-12);
      EXPECT_NEAR(double(kept[cat]) / trials, analytic, 0.01) << cat;
    }
  }
}

TEST(Downsample, RareAndUnseenCategoriesAreKept) {
  Catalog catalog;
  catalog["x"] = ItemMeta{"x", {"rare", "unseen"}, {}};
  CategoryStats stats;
  stats.frequency = {{"rare", 1e-7}};
  Rng rng(1);
  const UserSequence seq{"u", {"x", "x"}, {0, 1}};
  EXPECT_EQ(sample_category_sequence(seq, catalog, stats, rng),
            (std::vector<std::string>{"rare", "unseen", "rare", "unseen"}));
}

TEST(CategoryStats, FrequenciesSumToOneOverTrainSplit) {
  std::vector<RawInteraction> rows;
  Catalog catalog;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "i" + std::to_string(i);
    catalog[id] = ItemMeta{id, {i % 2 ? "odd" : "even", "all", "x", "ignored"}, {}};
  }
  for (int i = 0; i < 100; ++i) rows.push_back({"u" + std::to_string(i % 5), "i" + std::to_string(i % 10), i});
  const auto split = chronological_split(rows);
  const auto stats = build_category_stats(split, catalog);
  double total = 0;
  for (const auto& [c, f] : stats.frequency) total += f;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(stats.freq("ignored"), 0.0);
  EXPECT_NEAR(stats.freq("all"), 1.0 / 3.0, 1e-12);
}

TEST(Description, FieldsInFixedOrder) {
  ItemMeta m{"x", {"Bars", "Pubs"}, {{"is_open", "1"}, {"name", "The Owl"}, {"city", "Reno"}, {"unused", "z"}}};
  EXPECT_EQ(build_item_description(m), "name: The Owl\ncity: Reno\ncategories: Bars, Pubs\nis_open: 1");
}

TEST(JsonlIo, RoundTripAndErrorsNameTheLine) {
  const auto dir = std::filesystem::temp_directory_path() / "seqxrec_data_test";
  std::filesystem::create_directories(dir);
  const auto rows = kcore_fixture();
  write_interactions((dir / "i.jsonl").string(), rows);
  const auto back = load_interactions((dir / "i.jsonl").string());
  ASSERT_EQ(back.size(), rows.size());
  EXPECT_EQ(back[7].user_id, rows[7].user_id);
  EXPECT_EQ(back[7].timestamp, rows[7].timestamp);

  Catalog catalog;
  catalog["a"] = ItemMeta{"a", {"Bars"}, {{"name", "A"}}};
  write_items((dir / "m.jsonl").string(), catalog);
  const auto cat = load_items((dir / "m.jsonl").string());
  EXPECT_EQ(cat.at("a").categories, catalog["a"].categories);
  EXPECT_EQ(cat.at("a").fields, catalog["a"].fields);

  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << R"({"user_id":"u","item_id":"i","timestamp":1})" << "\n" << R"({"user_id":"u"})" << "\n";
  }
  try {
    load_interactions((dir / "bad.jsonl").string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  std::filesystem::remove_all(dir);
}
