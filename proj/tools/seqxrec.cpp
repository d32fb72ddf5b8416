#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "seqxrec/pipeline.hpp"
#include "seqxrec/synthetic.hpp"

namespace fs = std::filesystem;
using namespace seqxrec;

namespace {

// Relative input paths in a config file are relative to that file.
void anchor_paths(pipeline::Config& cfg, const std::string& config_path) {
  if (config_path.empty()) return;
  const fs::path base = fs::path(config_path).parent_path();
  for (std::string* p : {&cfg.data.interactions, &cfg.data.items, &cfg.data_dir})
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
}

}  // namespace

int main(int argc, char** argv) {
  seqxrec::pipeline::tune_allocator();
  CLI::App app{"Sequence-aware explanation generation and explanation-utility evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run", condition = "generated", ablation = "none";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (flat key = value lines)");
    cmd->add_option("--out", out_dir, "Work directory for artifacts")->capture_default_str();
    cmd->add_option("--set", overrides, "Override a config key, e.g. --set eer.epochs=10");
    cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { seed = s; seed_set = true; },
                                            "Override the config seed");
  };

  for (const auto& stage : pipeline::stage_names()) {
    auto* cmd = app.add_subcommand(stage, "Run the " + stage + " stage");
    add_common(cmd);
    if (stage == "evaluate")
      cmd->add_option("--condition", condition, "generated | ground_truth | random | empty")->capture_default_str();
    if (stage == "evaluate" || stage == "generate")
      cmd->add_option("--ablation", ablation, "none | wo_be | wo_se | wo_ct | wo_de")->capture_default_str();
  }
  auto* synth = app.add_subcommand("gen-synthetic", "Write a synthetic interaction log and catalog to --out");
  add_common(synth);
  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  add_common(show);

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    pipeline::Config cfg = config_path.empty() ? pipeline::Config{} : pipeline::load_config(config_path);
    anchor_paths(cfg, config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed_set) cfg.seed = seed;
    cfg.validate();

    if (name == "show-config") {
      std::cout << cfg.dump();
      return 0;
    }
    if (name == "gen-synthetic") {
      const auto data = pipeline::generate_synthetic(cfg.synthetic);
      pipeline::write_synthetic(out_dir, data);
      std::cout << "gen-synthetic: " << data.interactions.size() << " interactions, " << data.catalog.size()
                << " items in " << out_dir << "\n";
      return 0;
    }
    pipeline::Pipeline p(cfg, out_dir, &std::cout);
    p.run(name, condition, ablation);
    return 0;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
