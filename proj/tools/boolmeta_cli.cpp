#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "boolmeta/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::string profile;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed_offset;
  std::string out;
};

boolmeta::ExperimentConfig resolve(const Options& o) {
  std::optional<std::string> profile;
  if (!o.profile.empty()) profile = o.profile;
  auto cfg = o.config.empty() ? boolmeta::profile_config(profile.value_or("desk"))
                              : boolmeta::load_config(o.config, profile);
  if (o.workers) cfg.workers = *o.workers;
  if (o.seed_offset) cfg.seed_offset = *o.seed_offset;
  if (!o.out.empty()) cfg.out = o.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  boolmeta::tune_allocator();
  CLI::App app{"Meta-learning on Boolean concept tasks"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON config; keys override the profile")->check(CLI::ExistingFile);
    sub->add_option("--profile", opts.profile, "Base profile")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--workers", opts.workers, "Parallel jobs")->check(CLI::PositiveNumber);
    sub->add_option("--seed-offset", opts.seed_offset, "Added to every seed");
    sub->add_option("--out", opts.out, "Output directory");
  };

  using Command = int (*)(const boolmeta::ExperimentConfig&, std::ostream&);
  Command command = nullptr;
  auto add = [&](const char* name, const char* help, Command fn) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    sub->callback([&command, fn] { command = fn; });
  };
  add("generate", "Write held-out and training episode corpora", boolmeta::cmd_generate);
  add("train", "Run every (cell, regime, seed) job; resumes completed work", boolmeta::cmd_train);
  add("report", "Aggregate traces into summary tables and curves", boolmeta::cmd_report);
  add("landscape", "Curvature and roughness analysis of trained checkpoints", boolmeta::cmd_landscape);
  add("validate", "Check hashes, traces and corpora under the output directory", boolmeta::cmd_validate);
  bool show = false;
  auto* cfg_sub = app.add_subcommand("config", "Print the resolved configuration as JSON");
  add_common(cfg_sub);
  cfg_sub->callback([&show] { show = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? boolmeta::kExitOk : boolmeta::kExitConfig;
  }

  try {
    const auto cfg = resolve(opts);
    if (show) {
      std::cout << boolmeta::config_to_json(cfg) << '\n';
      return boolmeta::kExitOk;
    }
    return command(cfg, std::cout);
  } catch (const boolmeta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return boolmeta::kExitConfig;
  } catch (const boolmeta::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return boolmeta::kExitData;
  } catch (const boolmeta::DegenerateConceptSpace& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return boolmeta::kExitData;
  } catch (const boolmeta::ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return boolmeta::kExitData;
  } catch (const boolmeta::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return boolmeta::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return boolmeta::kExitFailure;
  }
}
