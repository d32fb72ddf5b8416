#include "seqxrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

namespace SEQXREC_NS::metrics {

RankedList::RankedList(const std::vector<std::size_t>& ids, const std::vector<Real>& scores) {
  if (ids.size() != scores.size()) throw ShapeError("RankedList: ids and scores differ in length");
  std::unordered_set<std::size_t> seen;
  for (std::size_t id : ids)
    if (!seen.insert(id).second) throw DomainError("RankedList: duplicate id " + std::to_string(id));
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  ids_.reserve(ids.size());
  for (std::size_t i : order) ids_.push_back(ids[i]);
}

std::size_t RankedList::rank_of(std::size_t id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw DomainError("target " + std::to_string(id) + " is not among the candidates");
  return static_cast<std::size_t>(it - ids_.begin()) + 1;
}

double recall_at_k(const RankedList& ranked, std::size_t target, std::size_t k) {
  if (k == 0) throw DomainError("recall_at_k: k must be at least 1");
  return ranked.rank_of(target) <= k ? 1.0 : 0.0;
}

double ndcg_at_k(const RankedList& ranked, std::size_t target, std::size_t k) {
  if (k == 0) throw DomainError("ndcg_at_k: k must be at least 1");
  const std::size_t rank = ranked.rank_of(target);
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double bleu(const std::string& candidate, const std::string& reference) {
  const auto cand = text::tokenize(candidate);
  const auto ref = text::tokenize(reference);
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
    for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cand_counts[{cand.begin() + i, cand.begin() + i + n}];
    const std::size_t total = cand.size() >= n ? cand.size() - n + 1 : 0;
    std::size_t matched = 0;
    for (const auto& [gram, c] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(c, it->second);
    }
    double p;
    if (matched > 0) {
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / (static_cast<double>(total) + 1.0);
    }
    log_sum += 0.25 * std::log(p);
  }
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum);
}

double embed_similarity(const text::SemanticEncoder& enc, const std::string& candidate,
                        const std::string& reference) {
  const auto a = enc.embed_text(candidate);
  const auto b = enc.embed_text(reference);
  return text::cosine(a.values(), b.values());
}

}  // namespace SEQXREC_NS::metrics
