#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "boolmeta/episodes.hpp"
#include "boolmeta/grammar.hpp"
#include "boolmeta/landscape.hpp"
#include "boolmeta/optim.hpp"

namespace boolmeta {

inline constexpr const char* kArtifactVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitNumerical = 4 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CellSpec {
  int features = 8;
  int max_depth = 3;

  bool operator==(const CellSpec&) const = default;
};

struct RegimeSpec {
  Regime regime = Regime::Sgd;
  int adapt_steps = 1;

  bool operator==(const RegimeSpec&) const = default;
};

struct LandscapeOptions {
  int tasks = 20;
  int probes = 100;
  int power_iters = 200;
  int minima_slices = 50;
  double minima_radius = 1.0;
  int minima_resolution = 41;
  int slice_resolution = 21;
  double slice_radius = 1.0;
  int roughness_window = 200;
  std::string loss_source = "query";  // or "support"
};

struct ExperimentConfig {
  std::string profile = "desk";
  std::vector<CellSpec> cells;
  std::vector<RegimeSpec> regimes;
  std::vector<std::uint64_t> seeds;
  std::uint64_t seed_offset = 0;
  int eval_tasks = 200;
  std::vector<int> eval_adapt_steps{1, 10};
  int generate_train_batches = 10;
  double threshold = 0.6;
  // Shared optimiser settings; regime and adapt_steps are set per job.
  RegimeConfig optim{};
  ProductionProbs probs{};
  int hidden_width = 128;
  int hidden_layers = 4;
  LandscapeOptions landscape{};
  int workers = 1;
  std::filesystem::path out = "runs";

  // Throws ConfigError on any out-of-range value.
  void validate() const;
};

// Built-in profiles: "desk" (minutes on a laptop) and "paper" (full sweep).
ExperimentConfig profile_config(const std::string& name);

// Parses a JSON config. Keys override the base profile, which is
// `profile_override` when given, else the file's "profile" key, else desk.
// Unknown keys and ill-typed values raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text, const std::optional<std::string>& profile_override = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::optional<std::string>& profile_override = {});

// Every resolved field, in the same shape parse_config accepts.
std::string config_to_json(const ExperimentConfig& cfg);

struct JobSpec {
  CellSpec cell;
  RegimeSpec regime;
  std::uint64_t seed = 0;
};

struct JobSeeds {
  std::uint64_t effective = 0;  // seed + seed_offset
  std::uint64_t train = 0;      // meta-training episode stream
  std::uint64_t eval = 0;       // held-out tasks
  std::uint64_t init = 0;       // network initialisation
};

// Depends only on (seed + offset, cell), so every regime in a cell sees the
// same held-out tasks and the same initial weights.
JobSeeds job_seeds(const ExperimentConfig& cfg, const CellSpec& cell, std::uint64_t seed);

Architecture architecture(const ExperimentConfig& cfg, const CellSpec& cell);
RegimeConfig regime_config(const ExperimentConfig& cfg, const RegimeSpec& spec);
GrammarConfig grammar_config(const ExperimentConfig& cfg, const CellSpec& cell, std::uint64_t stream_seed);
std::vector<Episode> eval_episodes(const ExperimentConfig& cfg, const CellSpec& cell, std::uint64_t seed,
                                   int count);
// Init seed of the from-scratch baseline on held-out task `task`.
std::uint64_t baseline_seed(const JobSeeds& seeds, int task);

std::vector<JobSpec> expand_jobs(const ExperimentConfig& cfg);
std::string cell_name(const CellSpec& cell);
std::filesystem::path job_dir(const ExperimentConfig& cfg, const JobSpec& job);

// Length of a baseline path up to the first recorded step whose support loss
// is at or below `target_loss` (the whole path when it never gets there).
double matched_loss_length(std::span<const Vector> trajectory, std::span<const TraceRecord> records,
                           double target_loss);

// Subcommands. Each returns an ExitCode and writes progress to `log`.
int cmd_generate(const ExperimentConfig& cfg, std::ostream& log);
int cmd_train(const ExperimentConfig& cfg, std::ostream& log);
int cmd_report(const ExperimentConfig& cfg, std::ostream& log);
int cmd_landscape(const ExperimentConfig& cfg, std::ostream& log);
int cmd_validate(const ExperimentConfig& cfg, std::ostream& log);

// Keeps glibc from returning large parameter buffers to the OS after every
// use. No-op elsewhere.
void tune_allocator();

}  // namespace boolmeta
