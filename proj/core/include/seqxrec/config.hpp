#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqxrec/common.hpp"

namespace SEQXREC_NS::pipeline {

struct SyntheticSpec {
  std::size_t users = 200;
  std::size_t items = 300;
  std::size_t categories = 10;
  double fidelity = 0.9;  // probability an interaction stays in the user's category
  std::size_t min_length = 20;
  std::size_t max_length = 30;
  std::uint64_t seed = 7;
};

// Every tunable of the pipeline. Files use flat "section.key = value" lines;
// see docs/formats.md for the key list.
struct Config {
  std::uint64_t seed = 0;
  std::string data_dir;  // templates and prompts; empty means the installed default

  struct {
    std::string source = "files";  // files | synthetic
    std::string interactions = "interactions.jsonl";
    std::string items = "items.jsonl";
    std::size_t kcore = 10;
    bool kcore_strict = false;
    std::size_t split_train = 8, split_validation = 1, split_test = 1;
    std::size_t max_len = 50;
    double downsample_t = 1e-5;
    std::string downsample_mode = "drop";  // drop | keep
  } data;

  SyntheticSpec synthetic;

  struct {
    std::size_t d = 64, layers = 2, heads = 4;
    std::size_t epochs = 30, batch = 32;
    double lr = 5e-4, weight_decay = 1e-5;
  } rec;

  struct {
    std::size_t d_sem = 64;
    std::size_t min_freq = 1;
  } text;

  struct {
    std::size_t experts = 8, layers = 2, heads = 4, d_out = 128;
    double dropout = 0.2;
    std::string fusion = "encoder";  // encoder | identity
  } moe;

  struct {
    std::size_t d = 128, layers = 4, heads = 4, ctx = 256;
    std::size_t pretrain_epochs = 5, pretrain_batch = 8;
    double pretrain_lr = 1e-3;
  } lm;

  struct {
    std::size_t epochs = 5, batch = 8;
    double lr = 1e-4, weight_decay = 1e-6;
    std::size_t max_cat_tokens = 64, max_target_tokens = 48;
    std::size_t max_train_pairs = 0;  // 0 keeps every training pair
    std::size_t max_new_tokens = 48;
    double temperature = 0.0;
  } seg;

  struct {
    std::size_t epochs = 50, batch = 256;
    double lr = 5e-4, weight_decay = 1e-5;
    std::size_t hidden = 16;
    double gamma = 0.1;
    std::vector<std::string> targets = {"ff1", "ff2"};
  } eer;

  struct {
    std::vector<std::size_t> k = {5, 10};
    bool exclude_history = true;
  } eval;

  // Applies one "key = value" assignment; unknown keys and bad values throw
  // ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Checks ranges and cross-field constraints.
  void validate() const;

  // Canonical "key = value" listing of every key, in keys() order.
  std::string dump() const;
  std::string resolved_data_dir() const;
};

// Parses a config file; errors name the file, line and key.
Config load_config(const std::string& path);
Config parse_config(const std::string& text, const std::string& origin = "<config>");

}  // namespace SEQXREC_NS::pipeline
