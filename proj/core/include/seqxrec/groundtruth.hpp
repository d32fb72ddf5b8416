#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "seqxrec/data.hpp"

namespace SEQXREC_NS::groundtruth {

enum class Provenance { kTemplate, kExternal };
std::string provenance_name(Provenance p);
Provenance parse_provenance(const std::string& name);

struct ExplanationRecord {
  std::string user_id, item_id;
  std::string category_level;
  std::string intent_level;
  Provenance provenance = Provenance::kTemplate;

  // "category | intent", the text the generator learns and the recommender encodes.
  std::string text() const;
};

using RecordMap = std::map<std::pair<std::string, std::string>, ExplanationRecord>;

// Directory holding templates/ and the prompt files; set at build time.
std::string default_data_dir();

struct TemplateBank {
  std::vector<std::string> explicit_templates;  // contain {category}
  std::vector<std::string> implicit_templates;  // contain {need}
  // category -> need phrases; "*" holds the fallback phrases.
  std::map<std::string, std::vector<std::string>> lexicon;

  static TemplateBank load(const std::string& data_dir = default_data_dir());
  const std::vector<std::string>& needs(const std::string& category) const;
};

std::string category_explanation(const data::ItemMeta& item);

// One explicit query naming a category and one implicit query that does not,
// joined by "; ". Items without categories get the implicit query only.
std::string intent_explanation(const data::ItemMeta& item, Rng& rng, const TemplateBank& bank);

// Text-in, text-out completion service.
class LLMClient {
 public:
  virtual ~LLMClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

struct HttpClientConfig {
  std::string endpoint;  // http://host[:port]/path
  std::string api_key;
  std::chrono::seconds timeout{30};
  int retries = 2;

  // Reads SEQXREC_LLM_ENDPOINT and SEQXREC_LLM_API_KEY; endpoint is empty
  // when the variable is unset.
  static HttpClientConfig from_environment();
};

// POSTs the prompt as text/plain and returns the response body.
class HttpLLMClient : public LLMClient {
 public:
  explicit HttpLLMClient(HttpClientConfig config);
  std::string complete(const std::string& prompt) override;

 private:
  HttpClientConfig config_;
  std::string host_, path_;
};

// Null when SEQXREC_LLM_ENDPOINT is unset.
std::unique_ptr<LLMClient> client_from_environment();

std::string render_prompt(const std::string& prompt_template, const data::ItemMeta& item);

// Parses "category: ..." and "intent: ..." lines; false when either is missing
// or empty.
bool parse_reply(const std::string& reply, std::string& category_level, std::string& intent_level);

struct BuildOptions {
  std::uint64_t seed = 0;
  std::string data_dir = default_data_dir();
  LLMClient* client = nullptr;
};

struct BuildStats {
  std::size_t records = 0;
  std::size_t external = 0;
  std::size_t client_failures = 0;
};

// A record for every (user, item) pair of every split. Explanations are
// derived from the item, once per item, and shared by its users.
RecordMap build_ground_truth(const data::SplitDataset& split, const data::Catalog& catalog,
                             const BuildOptions& options = {}, BuildStats* stats = nullptr);

void write_records(const std::string& path, const RecordMap& records);
RecordMap load_records(const std::string& path);

std::map<std::pair<std::string, std::string>, std::string> texts(const RecordMap& records);

}  // namespace SEQXREC_NS::groundtruth
