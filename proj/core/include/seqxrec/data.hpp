#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqxrec/rng.hpp"

namespace SEQXREC_NS::data {

struct RawInteraction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

struct ItemMeta {
  std::string item_id;
  std::vector<std::string> categories;
  // Named description fields (name, address, city, ...), kept as text.
  std::map<std::string, std::string> fields;
};

// Catalog keyed by item id; iteration order is lexicographic.
using Catalog = std::map<std::string, ItemMeta>;

struct UserSequence {
  std::string user_id;
  std::vector<std::string> items;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return items.size(); }
};

// Dense ids 1..M for items; 0 is reserved for padding.
class ItemIndex {
 public:
  ItemIndex() = default;
  explicit ItemIndex(std::vector<std::string> sorted_ids);

  std::size_t num_items() const { return names_.size(); }
  bool contains(const std::string& item_id) const { return ids_.count(item_id) > 0; }
  std::size_t id(const std::string& item_id) const;
  const std::string& name(std::size_t dense_id) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Fragments are aligned by user: train[u], validation[u] and test[u] belong
// to the same user and concatenate to that user's full time-ordered sequence.
struct SplitDataset {
  std::vector<UserSequence> train, validation, test;
  std::int64_t cutoff_train = 0;
  std::int64_t cutoff_val = 0;
  ItemIndex items;
  std::size_t dropped_users = 0;
  std::size_t dropped_interactions = 0;

  std::size_t num_users() const { return train.size(); }
  UserSequence full_sequence(std::size_t user) const;
  std::size_t count(const std::vector<UserSequence>& part) const;
};

struct CategoryStats {
  std::map<std::string, double> frequency;
  std::size_t occurrences = 0;

  // 0 for categories never seen in the training split.
  double freq(const std::string& category) const;
};

// How the value of downsample_probability is applied.
enum class DownsampleMode {
  kDrop,  // value is the removal probability (default)
  kKeep,  // value is the retention probability
};

inline constexpr std::size_t kMaxCategoriesPerItem = 3;

std::vector<RawInteraction> load_interactions(const std::string& path);
Catalog load_items(const std::string& path);
void write_interactions(const std::string& path, const std::vector<RawInteraction>& rows);
void write_items(const std::string& path, const Catalog& catalog);

// Repeatedly drops users and items with fewer than k interactions (at most k
// when `strict`) until nothing changes. Input order is preserved.
std::vector<RawInteraction> k_core_filter(const std::vector<RawInteraction>& interactions, std::size_t k,
                                          bool strict = false);

struct SplitRatios {
  std::size_t train = 8, validation = 1, test = 1;
};

SplitDataset chronological_split(const std::vector<RawInteraction>& interactions, SplitRatios ratios = {});

UserSequence truncate_sequence(const UserSequence& seq, std::size_t max_len);

double downsample_probability(double freq, double t = 1e-5);
double keep_probability(double freq, double t, DownsampleMode mode);

CategoryStats build_category_stats(const SplitDataset& split, const Catalog& catalog);

std::vector<std::string> sample_category_sequence(const UserSequence& seq, const Catalog& catalog,
                                                  const CategoryStats& stats, Rng& rng, double t = 1e-5,
                                                  DownsampleMode mode = DownsampleMode::kDrop);

std::string build_item_description(const ItemMeta& meta);

// Description fields in emission order.
const std::vector<std::string>& description_field_order();

}  // namespace SEQXREC_NS::data
