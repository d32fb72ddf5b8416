#pragma once

#include <string>
#include <vector>

#include "seqxrec/textembed.hpp"

namespace SEQXREC_NS::metrics {

// Candidate ids by descending score; equal scores order by ascending id.
class RankedList {
 public:
  RankedList(const std::vector<std::size_t>& ids, const std::vector<Real>& scores);

  const std::vector<std::size_t>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  // 1-based rank; throws DomainError when id is not a candidate.
  std::size_t rank_of(std::size_t id) const;

 private:
  std::vector<std::size_t> ids_;
};

double recall_at_k(const RankedList& ranked, std::size_t target, std::size_t k);
double ndcg_at_k(const RankedList& ranked, std::size_t target, std::size_t k);

// Sentence BLEU-4 over canonical tokens with uniform weights. Orders 2-4 with
// no matching n-gram use 1 / (c_n + 1) in place of 0; a candidate with no
// matching unigram scores 0.
double bleu(const std::string& candidate, const std::string& reference);

double embed_similarity(const text::SemanticEncoder& enc, const std::string& candidate,
                        const std::string& reference);

}  // namespace SEQXREC_NS::metrics
