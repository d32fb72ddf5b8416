#include "seqxrec/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "io.hpp"
#include "seqxrec/groundtruth.hpp"

namespace SEQXREC_NS::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream in(value);
  std::string part;
  while (std::getline(in, part, ','))
    if (!trim(part).empty()) out.push_back(trim(part));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const std::string v = trim(value);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || (v[0] == '-' && std::is_unsigned_v<T>))
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

struct Binding {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename T>
Binding number(std::function<T&(Config&)> field) {
  return {[field](Config& c, const std::string& key, const std::string& v) { field(c) = parse_number<T>(key, v); },
          [field](const Config& c) { return format_number(field(const_cast<Config&>(c))); }};
}

Binding text_value(std::function<std::string&(Config&)> field) {
  return {[field](Config& c, const std::string&, const std::string& v) { field(c) = trim(v); },
          [field](const Config& c) { return field(const_cast<Config&>(c)); }};
}

Binding boolean(std::function<bool&(Config&)> field) {
  return {[field](Config& c, const std::string& key, const std::string& v) {
            const std::string t = trim(v);
            if (t == "true") field(c) = true;
            else if (t == "false") field(c) = false;
            else throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
          },
          [field](const Config& c) { return std::string(field(const_cast<Config&>(c)) ? "true" : "false"); }};
}

using Table = std::vector<std::pair<std::string, Binding>>;

const Table& table() {
  using S = std::size_t;
  static const Table t = {
      {"seed", number<std::uint64_t>([](Config& c) -> std::uint64_t& { return c.seed; })},
      {"data_dir", text_value([](Config& c) -> std::string& { return c.data_dir; })},
      {"data.source", text_value([](Config& c) -> std::string& { return c.data.source; })},
      {"data.interactions", text_value([](Config& c) -> std::string& { return c.data.interactions; })},
      {"data.items", text_value([](Config& c) -> std::string& { return c.data.items; })},
      {"data.kcore", number<S>([](Config& c) -> S& { return c.data.kcore; })},
      {"data.kcore_strict", boolean([](Config& c) -> bool& { return c.data.kcore_strict; })},
      {"data.split_train", number<S>([](Config& c) -> S& { return c.data.split_train; })},
      {"data.split_validation", number<S>([](Config& c) -> S& { return c.data.split_validation; })},
      {"data.split_test", number<S>([](Config& c) -> S& { return c.data.split_test; })},
      {"data.max_len", number<S>([](Config& c) -> S& { return c.data.max_len; })},
      {"data.downsample_t", number<double>([](Config& c) -> double& { return c.data.downsample_t; })},
      {"data.downsample_mode", text_value([](Config& c) -> std::string& { return c.data.downsample_mode; })},
      {"synthetic.users", number<S>([](Config& c) -> S& { return c.synthetic.users; })},
      {"synthetic.items", number<S>([](Config& c) -> S& { return c.synthetic.items; })},
      {"synthetic.categories", number<S>([](Config& c) -> S& { return c.synthetic.categories; })},
      {"synthetic.fidelity", number<double>([](Config& c) -> double& { return c.synthetic.fidelity; })},
      {"synthetic.min_length", number<S>([](Config& c) -> S& { return c.synthetic.min_length; })},
      {"synthetic.max_length", number<S>([](Config& c) -> S& { return c.synthetic.max_length; })},
      {"synthetic.seed", number<std::uint64_t>([](Config& c) -> std::uint64_t& { return c.synthetic.seed; })},
      {"rec.d", number<S>([](Config& c) -> S& { return c.rec.d; })},
      {"rec.layers", number<S>([](Config& c) -> S& { return c.rec.layers; })},
      {"rec.heads", number<S>([](Config& c) -> S& { return c.rec.heads; })},
      {"rec.epochs", number<S>([](Config& c) -> S& { return c.rec.epochs; })},
      {"rec.batch", number<S>([](Config& c) -> S& { return c.rec.batch; })},
      {"rec.lr", number<double>([](Config& c) -> double& { return c.rec.lr; })},
      {"rec.weight_decay", number<double>([](Config& c) -> double& { return c.rec.weight_decay; })},
      {"text.d_sem", number<S>([](Config& c) -> S& { return c.text.d_sem; })},
      {"text.min_freq", number<S>([](Config& c) -> S& { return c.text.min_freq; })},
      {"moe.experts", number<S>([](Config& c) -> S& { return c.moe.experts; })},
      {"moe.layers", number<S>([](Config& c) -> S& { return c.moe.layers; })},
      {"moe.heads", number<S>([](Config& c) -> S& { return c.moe.heads; })},
      {"moe.d_out", number<S>([](Config& c) -> S& { return c.moe.d_out; })},
      {"moe.dropout", number<double>([](Config& c) -> double& { return c.moe.dropout; })},
      {"moe.fusion", text_value([](Config& c) -> std::string& { return c.moe.fusion; })},
      {"lm.d", number<S>([](Config& c) -> S& { return c.lm.d; })},
      {"lm.layers", number<S>([](Config& c) -> S& { return c.lm.layers; })},
      {"lm.heads", number<S>([](Config& c) -> S& { return c.lm.heads; })},
      {"lm.ctx", number<S>([](Config& c) -> S& { return c.lm.ctx; })},
      {"lm.pretrain_epochs", number<S>([](Config& c) -> S& { return c.lm.pretrain_epochs; })},
      {"lm.pretrain_batch", number<S>([](Config& c) -> S& { return c.lm.pretrain_batch; })},
      {"lm.pretrain_lr", number<double>([](Config& c) -> double& { return c.lm.pretrain_lr; })},
      {"seg.epochs", number<S>([](Config& c) -> S& { return c.seg.epochs; })},
      {"seg.batch", number<S>([](Config& c) -> S& { return c.seg.batch; })},
      {"seg.lr", number<double>([](Config& c) -> double& { return c.seg.lr; })},
      {"seg.weight_decay", number<double>([](Config& c) -> double& { return c.seg.weight_decay; })},
      {"seg.max_cat_tokens", number<S>([](Config& c) -> S& { return c.seg.max_cat_tokens; })},
      {"seg.max_target_tokens", number<S>([](Config& c) -> S& { return c.seg.max_target_tokens; })},
      {"seg.max_train_pairs", number<S>([](Config& c) -> S& { return c.seg.max_train_pairs; })},
      {"seg.max_new_tokens", number<S>([](Config& c) -> S& { return c.seg.max_new_tokens; })},
      {"seg.temperature", number<double>([](Config& c) -> double& { return c.seg.temperature; })},
      {"eer.epochs", number<S>([](Config& c) -> S& { return c.eer.epochs; })},
      {"eer.batch", number<S>([](Config& c) -> S& { return c.eer.batch; })},
      {"eer.lr", number<double>([](Config& c) -> double& { return c.eer.lr; })},
      {"eer.weight_decay", number<double>([](Config& c) -> double& { return c.eer.weight_decay; })},
      {"eer.hidden", number<S>([](Config& c) -> S& { return c.eer.hidden; })},
      {"eer.gamma", number<double>([](Config& c) -> double& { return c.eer.gamma; })},
      {"eer.targets",
       {[](Config& c, const std::string&, const std::string& v) { c.eer.targets = split_list(v); },
        [](const Config& c) {
          std::string out;
          for (const auto& t : c.eer.targets) out += (out.empty() ? "" : ",") + t;
          return out;
        }}},
      {"eval.k",
       {[](Config& c, const std::string& key, const std::string& v) {
          c.eval.k.clear();
          for (const auto& part : split_list(v)) c.eval.k.push_back(parse_number<std::size_t>(key, part));
        },
        [](const Config& c) {
          std::string out;
          for (auto k : c.eval.k) out += (out.empty() ? "" : ",") + std::to_string(k);
          return out;
        }}},
      {"eval.exclude_history", boolean([](Config& c) -> bool& { return c.eval.exclude_history; })},
  };
  return t;
}

const Binding& binding(const std::string& key) {
  for (const auto& [name, b] : table())
    if (name == key) return b;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) { binding(key).set(*this, key, value); }

std::string Config::get(const std::string& key) const { return binding(key).get(*this); }

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, b] : table()) out.push_back(name);
    return out;
  }();
  return names;
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "': " + what);
  };
  require(data.source == "files" || data.source == "synthetic", "data.source", "expected files or synthetic");
  require(data.downsample_mode == "drop" || data.downsample_mode == "keep", "data.downsample_mode",
          "expected drop or keep");
  require(data.split_train > 0 && data.split_validation > 0 && data.split_test > 0, "data.split_train",
          "split ratios must be positive");
  require(data.max_len > 0, "data.max_len", "must be positive");
  require(data.downsample_t > 0, "data.downsample_t", "must be positive");
  require(synthetic.fidelity >= 0 && synthetic.fidelity <= 1, "synthetic.fidelity", "must lie in [0, 1]");
  require(synthetic.categories > 0 && synthetic.categories <= synthetic.items, "synthetic.categories",
          "must be in 1..synthetic.items");
  require(synthetic.min_length > 0 && synthetic.min_length <= synthetic.max_length, "synthetic.min_length",
          "must be in 1..synthetic.max_length");
  require(synthetic.max_length <= synthetic.items, "synthetic.max_length", "cannot exceed synthetic.items");
  require(rec.heads > 0 && rec.d % rec.heads == 0, "rec.heads", "must divide rec.d");
  require(moe.heads > 0 && rec.d % moe.heads == 0 && text.d_sem % moe.heads == 0, "moe.heads",
          "must divide rec.d and text.d_sem");
  require(moe.experts > 0, "moe.experts", "must be positive");
  require(moe.dropout >= 0 && moe.dropout < 1, "moe.dropout", "must lie in [0, 1)");
  require(moe.fusion == "encoder" || moe.fusion == "identity", "moe.fusion", "expected encoder or identity");
  require(lm.heads > 0 && lm.d % lm.heads == 0, "lm.heads", "must divide lm.d");
  require(text.d_sem > 0, "text.d_sem", "must be positive");
  require(rec.lr > 0 && seg.lr > 0 && eer.lr > 0 && lm.pretrain_lr > 0, "rec.lr", "learning rates must be positive");
  require(rec.weight_decay >= 0 && seg.weight_decay >= 0 && eer.weight_decay >= 0, "rec.weight_decay",
          "weight decay cannot be negative");
  require(rec.batch > 0 && seg.batch > 0 && eer.batch > 0 && lm.pretrain_batch > 0, "rec.batch",
          "batch sizes must be positive");
  require(eer.gamma > 0, "eer.gamma", "must be positive");
  require(eer.hidden > 0, "eer.hidden", "must be positive");
  require(!eer.targets.empty(), "eer.targets", "needs at least one weight");
  for (const auto& t : eer.targets)
    require(t == "wq" || t == "wk" || t == "wv" || t == "wo" || t == "ff1" || t == "ff2", "eer.targets",
            "unknown weight '" + t + "'");
  require(!eval.k.empty() && std::all_of(eval.k.begin(), eval.k.end(), [](std::size_t k) { return k > 0; }),
          "eval.k", "needs positive cutoffs");
  require(seg.temperature >= 0, "seg.temperature", "cannot be negative");
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [name, b] : table()) out += name + " = " + b.get(*this) + "\n";
  return out;
}

std::string Config::resolved_data_dir() const { return data_dir.empty() ? groundtruth::default_data_dir() : data_dir; }

Config parse_config(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) { return parse_config(io::read_file(path), path); }

}  // namespace SEQXREC_NS::pipeline
