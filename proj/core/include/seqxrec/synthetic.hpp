#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqxrec/config.hpp"
#include "seqxrec/data.hpp"

namespace SEQXREC_NS::pipeline {

struct SyntheticData {
  std::vector<data::RawInteraction> interactions;
  data::Catalog catalog;
  std::map<std::string, std::string> user_category;  // latent category per user
};

// Category of synthetic item c (0-based); names past the built-in list are "Category N".
std::string synthetic_category_name(std::size_t c);

// Items are spread evenly over the categories. Each user has one latent
// category; every interaction comes from it with probability `fidelity` and
// from the whole catalog otherwise, never repeating an item. Timestamps
// increase strictly within a user.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Writes interactions.jsonl and items.jsonl into dir.
void write_synthetic(const std::string& dir, const SyntheticData& data);

}  // namespace SEQXREC_NS::pipeline
