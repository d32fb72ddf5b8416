#include "seqxrec/groundtruth.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <sstream>

#include "httplib.h"
#include "io.hpp"

#ifndef SEQXREC_DEFAULT_DATA_DIR
#define SEQXREC_DEFAULT_DATA_DIR "data"
#endif

namespace SEQXREC_NS::groundtruth {

namespace {

std::vector<std::string> data_lines(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(io::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(line);
  }
  return out;
}

std::string replace_all(std::string s, const std::string& key, const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
  return s;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> listed_categories(const data::ItemMeta& item) {
  std::vector<std::string> out;
  for (const auto& c : item.categories)
    if (!c.empty() && out.size() < data::kMaxCategoriesPerItem) out.push_back(c);
  return out;
}

// Implicit query for `category` that does not mention any of `avoid`.
std::string implicit_query(const TemplateBank& bank, const std::string& category,
                           const std::vector<std::string>& avoid, Rng& rng) {
  const auto& needs = bank.needs(category);
  const std::size_t t0 = static_cast<std::size_t>(rng.below(bank.implicit_templates.size()));
  const std::size_t n0 = static_cast<std::size_t>(rng.below(needs.size()));
  for (std::size_t i = 0; i < needs.size() * bank.implicit_templates.size(); ++i) {
    const std::size_t n = (n0 + i) % needs.size();
    const std::size_t t = (t0 + i / needs.size()) % bank.implicit_templates.size();
    std::string text = replace_all(bank.implicit_templates[t], "{need}", needs[n]);
    const std::string folded = lower(text);
    if (std::none_of(avoid.begin(), avoid.end(),
                     [&](const std::string& c) { return folded.find(lower(c)) != std::string::npos; }))
      return text;
  }
  return "something that fits what i need today";
}

}  // namespace

std::string provenance_name(Provenance p) { return p == Provenance::kExternal ? "external" : "template"; }

Provenance parse_provenance(const std::string& name) {
  if (name == "template") return Provenance::kTemplate;
  if (name == "external") return Provenance::kExternal;
  throw ParseError("unknown provenance '" + name + "'");
}

std::string ExplanationRecord::text() const { return category_level + " | " + intent_level; }

std::string default_data_dir() { return SEQXREC_DEFAULT_DATA_DIR; }

TemplateBank TemplateBank::load(const std::string& data_dir) {
  TemplateBank bank;
  bank.explicit_templates = data_lines(data_dir + "/templates/explicit.txt");
  bank.implicit_templates = data_lines(data_dir + "/templates/implicit.txt");
  for (const auto& line : data_lines(data_dir + "/templates/lexicon.tsv")) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("lexicon.tsv: missing tab in '" + line + "'");
    auto& phrases = bank.lexicon[line.substr(0, tab)];
    std::istringstream in(line.substr(tab + 1));
    std::string phrase;
    while (std::getline(in, phrase, '|'))
      if (!trim(phrase).empty()) phrases.push_back(trim(phrase));
  }
  for (const auto& t : bank.explicit_templates)
    if (t.find("{category}") == std::string::npos)
      throw ParseError("explicit template without {category}: '" + t + "'");
  if (bank.explicit_templates.empty() || bank.implicit_templates.empty())
    throw ParseError("template bank in " + data_dir + " is empty");
  if (bank.lexicon.count("*") == 0 || bank.lexicon.at("*").empty())
    throw ParseError("lexicon.tsv needs a non-empty * row");
  return bank;
}

const std::vector<std::string>& TemplateBank::needs(const std::string& category) const {
  auto it = lexicon.find(category);
  if (it != lexicon.end() && !it->second.empty()) return it->second;
  return lexicon.at("*");
}

std::string category_explanation(const data::ItemMeta& item) {
  const auto cats = listed_categories(item);
  if (cats.empty()) return "this item has no listed category";
  std::string out = "this item belongs to ";
  for (std::size_t i = 0; i < cats.size(); ++i) out += (i ? ", " : "") + cats[i];
  return out;
}

std::string intent_explanation(const data::ItemMeta& item, Rng& rng, const TemplateBank& bank) {
  const auto cats = listed_categories(item);
  if (cats.empty()) return implicit_query(bank, "*", {}, rng);
  const std::string& category = cats[static_cast<std::size_t>(rng.below(cats.size()))];
  const std::string& tmpl = bank.explicit_templates[static_cast<std::size_t>(rng.below(bank.explicit_templates.size()))];
  return replace_all(tmpl, "{category}", category) + "; " + implicit_query(bank, category, cats, rng);
}

HttpClientConfig HttpClientConfig::from_environment() {
  HttpClientConfig cfg;
  if (const char* e = std::getenv("SEQXREC_LLM_ENDPOINT")) cfg.endpoint = e;
  if (const char* k = std::getenv("SEQXREC_LLM_API_KEY")) cfg.api_key = k;
  return cfg;
}

HttpLLMClient::HttpLLMClient(HttpClientConfig config) : config_(std::move(config)) {
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos) throw ConfigError("LLM endpoint must look like http://host[:port]/path");
  const auto slash = config_.endpoint.find('/', scheme + 3);
  host_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
}

std::string HttpLLMClient::complete(const std::string& prompt) {
  httplib::Client cli(host_);
  cli.set_connection_timeout(config_.timeout);
  cli.set_read_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  std::string last_error;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    auto res = cli.Post(path_, headers, prompt, "text/plain");
    if (res && res->status == 200) return res->body;
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
  }
  throw Error("LLM request to " + config_.endpoint + " failed: " + last_error);
}

std::unique_ptr<LLMClient> client_from_environment() {
  auto cfg = HttpClientConfig::from_environment();
  if (cfg.endpoint.empty()) return nullptr;
  return std::make_unique<HttpLLMClient>(std::move(cfg));
}

std::string render_prompt(const std::string& prompt_template, const data::ItemMeta& item) {
  std::string cats;
  for (const auto& c : listed_categories(item)) cats += (cats.empty() ? "" : ", ") + c;
  std::string out = replace_all(prompt_template, "{item}", item.item_id);
  out = replace_all(out, "{categories}", cats.empty() ? "none" : cats);
  return replace_all(out, "{description}", data::build_item_description(item));
}

bool parse_reply(const std::string& reply, std::string& category_level, std::string& intent_level) {
  std::string cat, intent;
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    const std::string folded = lower(line);
    if (folded.rfind("category:", 0) == 0) cat = trim(line.substr(9));
    else if (folded.rfind("intent:", 0) == 0) intent = trim(line.substr(7));
  }
  if (cat.empty() || intent.empty() || cat.find('|') != std::string::npos || intent.find('|') != std::string::npos)
    return false;
  category_level = cat;
  intent_level = intent;
  return true;
}

RecordMap build_ground_truth(const data::SplitDataset& split, const data::Catalog& catalog,
                             const BuildOptions& options, BuildStats* stats) {
  const TemplateBank bank = TemplateBank::load(options.data_dir);
  const std::string prompt_template = options.client ? io::read_file(options.data_dir + "/gt_prompt.txt") : "";
  const Rng root = Rng(options.seed).derive("ground-truth");
  BuildStats local;

  struct Item {
    std::string category, intent;
    Provenance provenance;
  };
  std::map<std::string, Item> per_item;
  auto explain = [&](const std::string& item_id) -> const Item& {
    auto it = per_item.find(item_id);
    if (it != per_item.end()) return it->second;
    auto meta = catalog.find(item_id);
    if (meta == catalog.end()) throw DomainError("ground truth: item " + item_id + " is missing from the catalog");
    Rng rng = root.derive(item_id);
    Item item{category_explanation(meta->second), intent_explanation(meta->second, rng, bank), Provenance::kTemplate};
    if (options.client != nullptr) {
      try {
        std::string c, i;
        if (parse_reply(options.client->complete(render_prompt(prompt_template, meta->second)), c, i))
          item = {c, i, Provenance::kExternal};
        else
          ++local.client_failures;
      } catch (const std::exception&) {
        ++local.client_failures;
      }
    }
    return per_item.emplace(item_id, std::move(item)).first->second;
  };

  RecordMap records;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    for (const auto& seq : *part)
      for (const auto& item_id : seq.items) {
        const Item& e = explain(item_id);
        records[{seq.user_id, item_id}] = {seq.user_id, item_id, e.category, e.intent, e.provenance};
      }
  local.records = records.size();
  for (const auto& [key, r] : records) local.external += r.provenance == Provenance::kExternal;
  if (stats) *stats = local;
  return records;
}

void write_records(const std::string& path, const RecordMap& records) {
  std::string out;
  for (const auto& [key, r] : records) {
    nlohmann::json j = {{"user_id", r.user_id},
                        {"item_id", r.item_id},
                        {"category_level", r.category_level},
                        {"intent_level", r.intent_level},
                        {"provenance", provenance_name(r.provenance)}};
    out += j.dump() + "\n";
  }
  io::write_file_atomic(path, out);
}

RecordMap load_records(const std::string& path) {
  RecordMap records;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      ExplanationRecord r{j.at("user_id").get<std::string>(), j.at("item_id").get<std::string>(),
                          j.at("category_level").get<std::string>(), j.at("intent_level").get<std::string>(),
                          parse_provenance(j.at("provenance").get<std::string>())};
      records[{r.user_id, r.item_id}] = std::move(r);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return records;
}

std::map<std::pair<std::string, std::string>, std::string> texts(const RecordMap& records) {
  std::map<std::pair<std::string, std::string>, std::string> out;
  for (const auto& [key, r] : records) out.emplace(key, r.text());
  return out;
}

}  // namespace SEQXREC_NS::groundtruth
