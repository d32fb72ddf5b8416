#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqxrec/tensor.hpp"

namespace SEQXREC_NS::text {

// Lowercases and splits into runs of letters, digits, '-' and '\'', with
// every other non-space character as its own token.
std::vector<std::string> tokenize(std::string_view text);
// Joins with single spaces, except before , . ; : ! ? ) and after (.
std::string detokenize(const std::vector<std::string>& tokens);
// detokenize(tokenize(text)).
std::string canonical(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;
  static constexpr std::size_t kNumSpecial = 4;

  Vocabulary();
  // Ordered by frequency (descending), then token; tokens seen fewer than
  // min_freq times map to kUnk.
  static Vocabulary build(const std::vector<std::string>& corpus, std::size_t min_freq = 1);
  // Rebuilds from an id-ordered token list (specials included).
  static Vocabulary from_tokens(std::vector<std::string> tokens, std::size_t min_freq);

  std::size_t size() const { return tokens_.size(); }
  std::size_t min_frequency() const { return min_freq_; }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(std::string_view text) const;
  // Skips special ids.
  std::string decode(const std::vector<std::size_t>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::size_t min_freq_ = 1;
};

// Sentence embedding as the mean of token rows from a fixed table. Unknown and
// special tokens are skipped; text with no known token maps to zero.
class SemanticEncoder {
 public:
  SemanticEncoder(std::shared_ptr<const Vocabulary> vocab, num::Tensor table);
  static SemanticEncoder random(std::shared_ptr<const Vocabulary> vocab, std::size_t d_sem, std::uint64_t seed);

  std::size_t dim() const { return table_.cols(); }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const num::Tensor& table() const { return table_; }

  // [d_sem]
  num::Tensor embed_text(std::string_view text) const;
  // [n x d_sem]; row j is embed_text(descriptions[j]).
  num::Tensor embed_sequence(const std::vector<std::string>& descriptions) const;

 private:
  void embed_into(std::string_view text, Real* out) const;

  std::shared_ptr<const Vocabulary> vocab_;
  num::Tensor table_;
};

double cosine(std::span<const Real> a, std::span<const Real> b);

}  // namespace SEQXREC_NS::text
