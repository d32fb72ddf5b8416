#include "seqxrec/textembed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "seqxrec/rng.hpp"

namespace SEQXREC_NS::text {

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) || c == '-' || c == '\'' || c >= 0x80; }

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<unk>", "<bos>", "<eos>"};
  return specials;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    if (word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!current.empty()) out.push_back(std::move(current)), current.clear();
    if (!std::isspace(c)) out.emplace_back(1, static_cast<char>(c));
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  static const std::string no_space_before = ",.;:!?)";
  std::string out;
  bool glue = true;
  for (const auto& tok : tokens) {
    const bool attach = tok.size() == 1 && no_space_before.find(tok[0]) != std::string::npos;
    if (!glue && !attach) out += ' ';
    out += tok;
    glue = tok == "(";
  }
  return out;
}

std::string canonical(std::string_view text) { return detokenize(tokenize(text)); }

Vocabulary::Vocabulary() : tokens_(special_tokens()) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw DomainError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (auto& tok : tokenize(doc)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, c] : counts)
    if (c >= min_freq && std::find(special_tokens().begin(), special_tokens().end(), tok) == special_tokens().end())
      ranked.emplace_back(tok, c);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special_tokens();
  for (auto& [tok, c] : ranked) tokens.push_back(tok);
  return from_tokens(std::move(tokens), min_freq);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, std::size_t min_freq) {
  if (tokens.size() < kNumSpecial || !std::equal(special_tokens().begin(), special_tokens().end(), tokens.begin()))
    throw ParseError("vocabulary: token list must start with the special tokens");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.ids_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    if (!v.ids_.emplace(v.tokens_[i], i).second) throw ParseError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
  v.min_freq_ = min_freq;
  return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::vector<std::string> toks;
  for (std::size_t i : ids)
    if (i >= kNumSpecial) toks.push_back(token(i));
  return detokenize(toks);
}

SemanticEncoder::SemanticEncoder(std::shared_ptr<const Vocabulary> vocab, num::Tensor table)
    : vocab_(std::move(vocab)), table_(std::move(table)) {
  if (table_.rank() != 2 || table_.rows() != vocab_->size())
    throw ShapeError("SemanticEncoder: table " + num::shape_string(table_.shape()) + " does not match vocabulary of " +
                     std::to_string(vocab_->size()) + " tokens");
  for (Real v : table_.values())
    if (!std::isfinite(v)) throw DomainError("SemanticEncoder: non-finite table entry");
}

SemanticEncoder SemanticEncoder::random(std::shared_ptr<const Vocabulary> vocab, std::size_t d_sem,
                                        std::uint64_t seed) {
  Rng rng = Rng(seed).derive("semantic-encoder");
  num::Tensor table = num::Tensor::zeros({vocab->size(), d_sem});
  for (std::size_t r = Vocabulary::kNumSpecial; r < vocab->size(); ++r)
    for (std::size_t c = 0; c < d_sem; ++c) table.at(r, c) = static_cast<Real>(rng.normal());
  return SemanticEncoder(std::move(vocab), std::move(table));
}

void SemanticEncoder::embed_into(std::string_view text, Real* out) const {
  const std::size_t d = dim();
  std::fill(out, out + d, Real(0));
  std::size_t count = 0;
  for (const auto& tok : tokenize(text)) {
    const std::size_t id = vocab_->id(tok);
    if (id < Vocabulary::kNumSpecial) continue;
    const Real* row = table_.data() + id * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
    ++count;
  }
  if (count == 0) return;
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<Real>(count);
}

num::Tensor SemanticEncoder::embed_text(std::string_view text) const {
  num::Tensor out = num::Tensor::zeros({dim()});
  embed_into(text, out.data());
  return out;
}

num::Tensor SemanticEncoder::embed_sequence(const std::vector<std::string>& descriptions) const {
  if (descriptions.empty()) throw ShapeError("embed_sequence: no descriptions");
  num::Tensor out = num::Tensor::zeros({descriptions.size(), dim()});
  for (std::size_t j = 0; j < descriptions.size(); ++j) embed_into(descriptions[j], out.data() + j * dim());
  return out;
}

double cosine(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace SEQXREC_NS::text
