#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "boolmeta/objective.hpp"

namespace boolmeta {

struct CellId {
  std::string method;  // e.g. "sgd", "metasgd1_k1"
  int features = 0;
  int max_depth = 0;
  int adapt_steps = 0;
  std::string order;  // "none", "first", "second"

  bool operator==(const CellId&) const = default;
};

struct TraceRecord {
  std::int64_t episode = 0;
  std::int64_t cum_samples = 0;
  double support_loss = 0.0;
  double query_loss = 0.0;
  double query_acc = 0.0;

  bool operator==(const TraceRecord&) const = default;
};

struct RunTrace {
  CellId cell;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  std::vector<Vector> snapshots;  // optional parameter snapshots
};

// Returns a description of the first broken invariant, or nullopt.
std::optional<std::string> check_trace(const RunTrace& trace);

inline constexpr int kThresholdWindow = 5;

// Cumulative samples at the first record whose trailing moving average of
// query accuracy reaches `threshold`. The window is seeded with the available
// prefix. nullopt means the threshold was never reached.
std::optional<std::int64_t> samples_to_threshold(const RunTrace& trace, double threshold,
                                                 int window = kThresholdWindow);

// Trapezoidal area under query accuracy against episode index normalised to [0, 1].
double auc(const RunTrace& trace);

struct SeedScalars {
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double auc = 0.0;
  std::optional<std::int64_t> samples_to_threshold;
};

struct CellSummary {
  CellId cell;
  int seed_count = 0;
  double threshold = 0.6;
  std::vector<std::int64_t> episodes;
  std::vector<std::int64_t> cum_samples;
  std::vector<double> mean_accuracy;
  std::vector<double> stderr_accuracy;
  double final_accuracy = 0.0;
  double final_accuracy_stderr = 0.0;
  double mean_auc = 0.0;
  // Mean over the seeds that reached the threshold; nullopt when none did.
  std::optional<double> mean_samples_to_threshold;
  int not_reached_count = 0;
  std::vector<SeedScalars> per_seed;  // sorted by seed
};

// Throws std::invalid_argument on mismatched cells or misaligned record grids.
CellSummary aggregate(const std::vector<RunTrace>& traces, double threshold = 0.6);

// Standard error of the mean (sample standard deviation / sqrt(n)); 0 for n < 2.
double standard_error(const std::vector<double>& values);
double mean(const std::vector<double>& values);

inline constexpr const char* kNotReached = "NotReached";

// CSV columns: method,F,D,K,order,seed,episode,cum_samples,support_loss,query_loss,query_acc
void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace);
RunTrace read_trace_csv(const std::filesystem::path& path);

std::string format_double(double value);

}  // namespace boolmeta
