#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "boolmeta/objective.hpp"
#include "boolmeta/rng.hpp"

namespace boolmeta {

// ---------------------------------------------------------------------------
// Roughness of a loss sequence
// ---------------------------------------------------------------------------

struct RoughnessOptions {
  double sigma = 1.0;
  double eps = 1e-8;
};

// Min-max normalisation to [0, 1]; constant input maps to zeros.
std::vector<double> minmax_normalize(std::span<const double> values);

// Discrete Gaussian smoothing truncated at 4 sigma. Samples beyond an end are
// point-reflected through the end sample, so affine input stays affine.
std::vector<double> gaussian_smooth(std::span<const double> values, double sigma);

// Interior second differences l[i+1] - 2 l[i] + l[i-1].
std::vector<double> second_differences(std::span<const double> values);

// std(∇²L) / (mean|∇²L| + eps) of the normalised, smoothed sequence, with a
// population standard deviation. Requires at least three values.
double roughness(std::span<const double> losses, const RoughnessOptions& opts = {});

// Roughness of consecutive non-overlapping windows; a sequence shorter than
// one window is scored whole. Trailing windows with fewer than 3 values are dropped.
std::vector<double> windowed_roughness(std::span<const double> losses, int window = 200,
                                       const RoughnessOptions& opts = {});

// ---------------------------------------------------------------------------
// Random-direction slices
// ---------------------------------------------------------------------------

using BlockList = std::vector<std::pair<Eigen::Index, Eigen::Index>>;

// Gaussian direction rescaled so each block matches the norm of that block of
// `center`, then normalised to unit length. Falls back to the raw direction
// when the rescaled one vanishes.
Vector layer_normalized_direction(const Vector& center, const BlockList& blocks, Rng& rng);

struct SliceGrid {
  Vector center;
  std::vector<Vector> directions;  // unit norm, mutually orthogonal
  double radius = 0.0;
  int resolution = 0;
  std::uint64_t direction_seed = 0;
  std::vector<double> values;  // row-major, resolution^dims entries

  int dims() const { return static_cast<int>(directions.size()); }
  double coordinate(int i) const;
  double at(int i, int j = 0) const { return values[static_cast<std::size_t>(i) * (dims() == 2 ? resolution : 1) + j]; }
};

// Throws std::invalid_argument unless dims ∈ {1,2} and resolution is odd and >= 3.
SliceGrid slice(const Objective& f, const Vector& center, const BlockList& blocks, int dims, double radius,
                int resolution, std::uint64_t direction_seed);

// Interior points strictly below both neighbours.
int count_local_minima(std::span<const double> values);

struct MinimaStats {
  double mean = 0.0;
  double sd = 0.0;
  int slices = 0;
  double radius = 0.0;
  int resolution = 0;
};

MinimaStats local_minima_statistics(const Objective& f, const Vector& center, const BlockList& blocks, int slices,
                                    double radius, int resolution, std::uint64_t seed);

// Σ ‖θ_{t+1} − θ_t‖₂. Requires at least two snapshots.
double trajectory_length(std::span<const Vector> snapshots);

// ---------------------------------------------------------------------------
// Curvature
// ---------------------------------------------------------------------------

using LinearOperator = std::function<Vector(const Vector&)>;

LinearOperator hessian_operator(const Objective& f, const Vector& at);

struct TraceEstimate {
  double estimate = 0.0;
  double stderr_estimate = 0.0;
  int probes = 0;
};

// Hutchinson estimator with Rademacher probes.
TraceEstimate hessian_trace(const LinearOperator& h, Eigen::Index n, int probes, Rng& rng);

struct SpectralEstimate {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double spectral_norm = 0.0;
  std::optional<double> condition;  // nullopt = unbounded
  bool converged = true;
  double last_delta = 0.0;  // relative Rayleigh-quotient change at the last iterate
  int iterations = 0;
};

inline constexpr double kConvergenceTolerance = 1e-6;
inline constexpr double kUnboundedRatio = 1e-10;

// κ = λ_max / λ_min, or nullopt when |λ_min| < 1e-10·|λ_max|.
std::optional<double> condition_number(double lambda_max, double lambda_min);

// Power iteration for the largest-magnitude eigenvalue, then shifted power
// iteration on (H − λ̂I) for the opposite end of the spectrum. Iteration stops
// early once the relative Rayleigh change drops below `stop_tolerance`.
SpectralEstimate spectral_extremes(const LinearOperator& h, Eigen::Index n, int iters, Rng& rng,
                                   double stop_tolerance = 1e-12);

struct CurvatureReport {
  std::string method;
  int features = 0;
  int max_depth = 0;
  int tasks = 0;
  std::string loss_source = "query";
  double roughness = 0.0;
  double roughness_stderr = 0.0;
  double trace = 0.0;
  double trace_stderr = 0.0;
  double spectral_norm = 0.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  std::optional<double> condition;
  int nonconverged = 0;
  double minima_mean = 0.0;
  double minima_sd = 0.0;
  double trajectory_length = 0.0;
  // Baseline paths cut where they first match the meta-adapted support loss,
  // or after the same number of samples as the meta adaptation.
  double trajectory_length_matched_loss = 0.0;
  double trajectory_length_matched_samples = 0.0;
  int probes = 0;
  int power_iters = 0;
  int minima_slices = 0;
  double minima_radius = 0.0;
  int minima_resolution = 0;
};

struct CurvatureDelta {
  std::optional<double> trace;
  std::optional<double> roughness;
  std::optional<double> spectral_norm;
  std::optional<double> condition;
};

// (meta − baseline) / |baseline|; nullopt when the baseline is zero or unbounded.
std::optional<double> relative_delta(std::optional<double> meta, std::optional<double> baseline);
CurvatureDelta curvature_delta(const CurvatureReport& meta, const CurvatureReport& baseline);

// Exports. Slice grids: '#' header lines then one comma-separated row per grid row.
void write_slice_grid(const std::filesystem::path& path, const SliceGrid& grid);
std::string curvature_report_json(const CurvatureReport& r);
std::string curvature_delta_json(const CurvatureReport& meta, const CurvatureReport& baseline,
                                 const CurvatureDelta& d);

}  // namespace boolmeta
