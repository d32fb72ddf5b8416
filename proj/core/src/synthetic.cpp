#include "seqxrec/synthetic.hpp"

#include <cstdio>
#include <filesystem>

namespace SEQXREC_NS::pipeline {

namespace {

const std::vector<std::string>& category_names() {
  static const std::vector<std::string> names = {
      "Restaurants", "Bars",     "Coffee & Tea", "Shopping", "Beauty & Spas", "Fitness",
      "Hotels",      "Automotive", "Pets",       "Nightlife", "Music",        "Comedy",
      "Sports",      "Food",     "Travel",       "Education", "Gaming",       "Fashion"};
  return names;
}

std::string numbered(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, n);
  return buf;
}

}  // namespace

std::string synthetic_category_name(std::size_t c) {
  return c < category_names().size() ? category_names()[c] : "Category " + std::to_string(c + 1);
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.fidelity < 0 || spec.fidelity > 1) throw DomainError("synthetic: fidelity must lie in [0, 1]");
  if (spec.categories == 0 || spec.categories > spec.items)
    throw DomainError("synthetic: categories must be in 1..items");
  if (spec.min_length == 0 || spec.min_length > spec.max_length || spec.max_length > spec.items)
    throw DomainError("synthetic: need 1 <= min_length <= max_length <= items");
  static const char* kCities[] = {"Springfield", "Riverton", "Lakeside", "Hillview", "Fairmont"};
  const Rng root = Rng(spec.seed).derive("synthetic");

  SyntheticData out;
  std::vector<std::vector<std::size_t>> by_category(spec.categories);
  Rng item_rng = root.derive("items");
  for (std::size_t i = 0; i < spec.items; ++i) {
    const std::size_t c = i % spec.categories;
    by_category[c].push_back(i);
    data::ItemMeta meta;
    meta.item_id = numbered("item", i + 1);
    meta.categories = {synthetic_category_name(c)};
    meta.fields["name"] = synthetic_category_name(c) + " spot " + std::to_string(i / spec.categories + 1);
    meta.fields["city"] = kCities[item_rng.below(5)];
    const auto half_stars = 2 + item_rng.below(9);
    meta.fields["stars"] = std::to_string(half_stars / 2) + (half_stars % 2 ? ".5" : ".0");
    meta.fields["is_open"] = item_rng.bernoulli(0.9) ? "1" : "0";
    out.catalog.emplace(meta.item_id, std::move(meta));
  }

  for (std::size_t u = 0; u < spec.users; ++u) {
    Rng rng = root.derive(static_cast<std::uint64_t>(u));
    const std::string user = numbered("user", u + 1);
    const std::size_t c = static_cast<std::size_t>(rng.below(spec.categories));
    out.user_category[user] = synthetic_category_name(c);
    const std::size_t length = spec.min_length + static_cast<std::size_t>(rng.below(spec.max_length - spec.min_length + 1));
    std::vector<bool> seen(spec.items, false);
    std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(rng.below(86'400));
    for (std::size_t step = 0; step < length; ++step) {
      std::vector<std::size_t> pool;
      if (rng.bernoulli(spec.fidelity))
        for (std::size_t i : by_category[c])
          if (!seen[i]) pool.push_back(i);
      if (pool.empty())
        for (std::size_t i = 0; i < spec.items; ++i)
          if (!seen[i]) pool.push_back(i);
      const std::size_t item = pool[static_cast<std::size_t>(rng.below(pool.size()))];
      seen[item] = true;
      ts += 3'600 + static_cast<std::int64_t>(rng.below(3 * 86'400));
      out.interactions.push_back({user, numbered("item", item + 1), ts});
    }
  }
  return out;
}

void write_synthetic(const std::string& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  data::write_interactions(dir + "/interactions.jsonl", data.interactions);
  data::write_items(dir + "/items.jsonl", data.catalog);
}

}  // namespace SEQXREC_NS::pipeline
