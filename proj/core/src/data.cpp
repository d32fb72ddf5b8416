#include "seqxrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "io.hpp"

namespace SEQXREC_NS::data {

using nlohmann::json;

ItemIndex::ItemIndex(std::vector<std::string> sorted_ids) : names_(std::move(sorted_ids)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!ids_.emplace(names_[i], i + 1).second) throw DomainError("ItemIndex: duplicate item id " + names_[i]);
  }
}

std::size_t ItemIndex::id(const std::string& item_id) const {
  auto it = ids_.find(item_id);
  if (it == ids_.end()) throw DomainError("unknown item id '" + item_id + "'");
  return it->second;
}

const std::string& ItemIndex::name(std::size_t dense_id) const {
  if (dense_id == 0 || dense_id > names_.size())
    throw DomainError("dense item id " + std::to_string(dense_id) + " out of range");
  return names_[dense_id - 1];
}

UserSequence SplitDataset::full_sequence(std::size_t user) const {
  UserSequence out = train.at(user);
  for (const auto* part : {&validation.at(user), &test.at(user)}) {
    out.items.insert(out.items.end(), part->items.begin(), part->items.end());
    out.timestamps.insert(out.timestamps.end(), part->timestamps.begin(), part->timestamps.end());
  }
  return out;
}

std::size_t SplitDataset::count(const std::vector<UserSequence>& part) const {
  std::size_t n = 0;
  for (const auto& s : part) n += s.size();
  return n;
}

double CategoryStats::freq(const std::string& category) const {
  auto it = frequency.find(category);
  return it == frequency.end() ? 0.0 : it->second;
}

namespace {

std::string text_field(const json& value, const std::string& key, const std::string& where) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<std::int64_t>());
  throw ParseError(where + ": field '" + key + "' must be a string");
}

std::string scalar_text(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_object()) {
    std::string out;
    for (auto it = value.begin(); it != value.end(); ++it) {
      if (!out.empty()) out += ", ";
      out += it.key() + " " + scalar_text(it.value());
    }
    return out;
  }
  return value.dump();
}

}  // namespace

std::vector<RawInteraction> load_interactions(const std::string& path) {
  std::vector<RawInteraction> rows;
  io::for_each_jsonl(path, [&](const json& rec, std::size_t line) {
    const std::string where = path + ":" + std::to_string(line);
    for (const char* key : {"user_id", "item_id", "timestamp"})
      if (!rec.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    RawInteraction r;
    r.user_id = text_field(rec["user_id"], "user_id", where);
    r.item_id = text_field(rec["item_id"], "item_id", where);
    if (!rec["timestamp"].is_number_integer()) throw ParseError(where + ": timestamp must be an integer");
    r.timestamp = rec["timestamp"].get<std::int64_t>();
    if (r.timestamp < 0) throw ParseError(where + ": negative timestamp " + std::to_string(r.timestamp));
    rows.push_back(std::move(r));
  });
  return rows;
}

Catalog load_items(const std::string& path) {
  Catalog catalog;
  io::for_each_jsonl(path, [&](const json& rec, std::size_t line) {
    const std::string where = path + ":" + std::to_string(line);
    if (!rec.contains("item_id")) throw ParseError(where + ": missing field 'item_id'");
    ItemMeta meta;
    meta.item_id = text_field(rec["item_id"], "item_id", where);
    if (meta.item_id.empty()) throw ParseError(where + ": empty item_id");
    if (rec.contains("categories")) {
      const json& cats = rec["categories"];
      if (cats.is_array()) {
        for (const auto& c : cats) meta.categories.push_back(text_field(c, "categories", where));
      } else if (cats.is_string()) {
        // Yelp stores categories as one comma-separated string.
        std::string all = cats.get<std::string>();
        std::size_t start = 0;
        while (start <= all.size()) {
          std::size_t end = all.find(',', start);
          if (end == std::string::npos) end = all.size();
          std::string c = all.substr(start, end - start);
          c.erase(0, c.find_first_not_of(' '));
          c.erase(c.find_last_not_of(' ') + 1);
          if (!c.empty()) meta.categories.push_back(c);
          start = end + 1;
        }
      } else if (!cats.is_null()) {
        throw ParseError(where + ": categories must be an array");
      }
    }
    for (auto it = rec.begin(); it != rec.end(); ++it) {
      if (it.key() == "item_id" || it.key() == "categories" || it.value().is_null()) continue;
      meta.fields[it.key()] = scalar_text(it.value());
    }
    const std::string id = meta.item_id;
    if (!catalog.emplace(id, std::move(meta)).second) throw ParseError(where + ": duplicate item_id " + id);
  });
  return catalog;
}

void write_interactions(const std::string& path, const std::vector<RawInteraction>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += json{{"user_id", r.user_id}, {"item_id", r.item_id}, {"timestamp", r.timestamp}}.dump();
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

void write_items(const std::string& path, const Catalog& catalog) {
  std::string out;
  for (const auto& [id, meta] : catalog) {
    json rec = json::object();
    rec["item_id"] = id;
    rec["categories"] = meta.categories;
    for (const auto& [k, v] : meta.fields) rec[k] = v;
    out += rec.dump();
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

std::vector<RawInteraction> k_core_filter(const std::vector<RawInteraction>& interactions, std::size_t k,
                                          bool strict) {
  if (k == 0) throw DomainError("k_core_filter: k must be at least 1");
  const std::size_t need = strict ? k + 1 : k;
  std::vector<bool> alive(interactions.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, std::size_t> users, items;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (!alive[i]) continue;
      ++users[interactions[i].user_id];
      ++items[interactions[i].item_id];
    }
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (!alive[i]) continue;
      if (users[interactions[i].user_id] < need || items[interactions[i].item_id] < need) {
        alive[i] = false;
        changed = true;
      }
    }
  }
  std::vector<RawInteraction> out;
  for (std::size_t i = 0; i < interactions.size(); ++i)
    if (alive[i]) out.push_back(interactions[i]);
  return out;
}

SplitDataset chronological_split(const std::vector<RawInteraction>& interactions, SplitRatios ratios) {
  const std::size_t n = interactions.size();
  if (n == 0) throw DomainError("chronological_split: no interactions");
  const std::size_t total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train == 0 || ratios.validation == 0 || ratios.test == 0)
    throw DomainError("chronological_split: every ratio must be positive");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return interactions[a].timestamp < interactions[b].timestamp;
  });
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  const std::size_t last_train = ceil_div(n * ratios.train, total) - 1;
  const std::size_t last_val = ceil_div(n * (ratios.train + ratios.validation), total) - 1;

  SplitDataset split;
  split.cutoff_train = interactions[order[last_train]].timestamp;
  split.cutoff_val = interactions[order[last_val]].timestamp;

  // Users in order of first appearance in the time-sorted stream.
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<UserSequence> full;
  for (std::size_t idx : order) {
    const auto& r = interactions[idx];
    auto [it, fresh] = slot.emplace(r.user_id, full.size());
    if (fresh) full.push_back(UserSequence{r.user_id, {}, {}});
    full[it->second].items.push_back(r.item_id);
    full[it->second].timestamps.push_back(r.timestamp);
  }
  std::sort(full.begin(), full.end(), [](const UserSequence& a, const UserSequence& b) { return a.user_id < b.user_id; });

  std::set<std::string> item_ids;
  for (const auto& seq : full) {
    UserSequence tr{seq.user_id, {}, {}}, va{seq.user_id, {}, {}}, te{seq.user_id, {}, {}};
    for (std::size_t i = 0; i < seq.size(); ++i) {
      UserSequence& dst = seq.timestamps[i] <= split.cutoff_train ? tr
                          : seq.timestamps[i] <= split.cutoff_val ? va
                                                                  : te;
      dst.items.push_back(seq.items[i]);
      dst.timestamps.push_back(seq.timestamps[i]);
    }
    if (tr.items.empty()) {
      ++split.dropped_users;
      split.dropped_interactions += seq.size();
      continue;
    }
    for (const auto& i : seq.items) item_ids.insert(i);
    split.train.push_back(std::move(tr));
    split.validation.push_back(std::move(va));
    split.test.push_back(std::move(te));
  }
  if (split.count(split.train) == 0 || split.count(split.validation) == 0 || split.count(split.test) == 0) {
    throw DomainError("chronological_split: degenerate split (" + std::to_string(split.count(split.train)) + "/" +
                      std::to_string(split.count(split.validation)) + "/" +
                      std::to_string(split.count(split.test)) + ")");
  }
  split.items = ItemIndex(std::vector<std::string>(item_ids.begin(), item_ids.end()));
  return split;
}

UserSequence truncate_sequence(const UserSequence& seq, std::size_t max_len) {
  if (max_len == 0) throw DomainError("truncate_sequence: max_len must be at least 1");
  if (seq.size() <= max_len) return seq;
  const auto skip = static_cast<std::ptrdiff_t>(seq.size() - max_len);
  return UserSequence{seq.user_id, {seq.items.begin() + skip, seq.items.end()},
                      {seq.timestamps.begin() + skip, seq.timestamps.end()}};
}

double downsample_probability(double freq, double t) {
  if (!(freq > 0.0) || !(t > 0.0))
    throw DomainError("downsample_probability: freq and t must be positive (freq=" + std::to_string(freq) +
                      ", t=" + std::to_string(t) + ")");
  if (freq > t) return 1.0 - std::sqrt(t / freq);
  return 1.0;
}

double keep_probability(double freq, double t, DownsampleMode mode) {
  const double p = downsample_probability(freq, t);
  if (freq <= t) return 1.0;
  return mode == DownsampleMode::kDrop ? 1.0 - p : p;
}

CategoryStats build_category_stats(const SplitDataset& split, const Catalog& catalog) {
  CategoryStats stats;
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : split.train) {
    for (const auto& item : seq.items) {
      auto it = catalog.find(item);
      if (it == catalog.end()) continue;
      const auto& cats = it->second.categories;
      for (std::size_t c = 0; c < std::min(cats.size(), kMaxCategoriesPerItem); ++c) {
        ++counts[cats[c]];
        ++stats.occurrences;
      }
    }
  }
  for (const auto& [cat, count] : counts)
    stats.frequency[cat] = static_cast<double>(count) / static_cast<double>(stats.occurrences);
  return stats;
}

std::vector<std::string> sample_category_sequence(const UserSequence& seq, const Catalog& catalog,
                                                  const CategoryStats& stats, Rng& rng, double t,
                                                  DownsampleMode mode) {
  std::vector<std::string> out;
  for (const auto& item : seq.items) {
    auto it = catalog.find(item);
    if (it == catalog.end()) continue;
    const auto& cats = it->second.categories;
    for (std::size_t c = 0; c < std::min(cats.size(), kMaxCategoriesPerItem); ++c) {
      const double f = stats.freq(cats[c]);
      // One draw per category keeps the stream aligned regardless of outcome.
      const double u = rng.uniform();
      const double keep = f > 0.0 ? keep_probability(f, t, mode) : 1.0;
      if (u < keep) out.push_back(cats[c]);
    }
  }
  return out;
}

const std::vector<std::string>& description_field_order() {
  static const std::vector<std::string> order = {"name",       "address",    "city",  "state",
                                                 "stars",      "star_range", "attributes",
                                                 "categories", "hours",      "is_open"};
  return order;
}

std::string build_item_description(const ItemMeta& meta) {
  std::string out;
  for (const auto& field : description_field_order()) {
    std::string value;
    if (field == "categories") {
      for (const auto& c : meta.categories) value += (value.empty() ? "" : ", ") + c;
    } else if (auto it = meta.fields.find(field); it != meta.fields.end()) {
      value = it->second;
    }
    if (value.empty()) continue;
    if (!out.empty()) out += '\n';
    out += field + ": " + value;
  }
  return out;
}

}  // namespace SEQXREC_NS::data
