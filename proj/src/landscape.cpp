#include "boolmeta/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "boolmeta/hash.hpp"
#include "boolmeta/metrics.hpp"
#include "json.hpp"

namespace boolmeta {

std::vector<double> minmax_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

namespace {

// Value at a possibly out-of-range index, point-reflecting through the ends.
double reflected(std::span<const double> x, long i) {
  const long last = static_cast<long>(x.size()) - 1;
  if (last == 0) return x[0];
  if (i < 0) return 2.0 * x[0] - reflected(x, -i);
  if (i > last) return 2.0 * x[last] - reflected(x, 2 * last - i);
  return x[static_cast<std::size_t>(i)];
}

}  // namespace

std::vector<double> gaussian_smooth(std::span<const double> values, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be > 0");
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double acc = 0.0;
    for (long k = -radius; k <= radius; ++k)
      acc += kernel[static_cast<std::size_t>(k + radius)] * reflected(values, static_cast<long>(i) + k);
    out[i] = acc;
  }
  return out;
}

std::vector<double> second_differences(std::span<const double> values) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) out.push_back(values[i + 1] - 2.0 * values[i] + values[i - 1]);
  return out;
}

double roughness(std::span<const double> losses, const RoughnessOptions& opts) {
  if (losses.size() < 3) throw std::invalid_argument("roughness: sequence needs at least 3 values");
  const auto normalized = minmax_normalize(losses);
  const auto smoothed = gaussian_smooth(normalized, opts.sigma);
  const auto d2 = second_differences(smoothed);
  double m = 0.0, abs_mean = 0.0;
  for (double d : d2) {
    m += d;
    abs_mean += std::abs(d);
  }
  m /= static_cast<double>(d2.size());
  abs_mean /= static_cast<double>(d2.size());
  double var = 0.0;
  for (double d : d2) var += (d - m) * (d - m);
  var /= static_cast<double>(d2.size());
  return std::sqrt(var) / (abs_mean + opts.eps);
}

std::vector<double> windowed_roughness(std::span<const double> losses, int window, const RoughnessOptions& opts) {
  if (window < 3) throw std::invalid_argument("windowed_roughness: window must be >= 3");
  std::vector<double> out;
  if (losses.size() < static_cast<std::size_t>(window)) {
    if (losses.size() >= 3) out.push_back(roughness(losses, opts));
    return out;
  }
  for (std::size_t start = 0; start + 3 <= losses.size(); start += static_cast<std::size_t>(window)) {
    const auto len = std::min<std::size_t>(static_cast<std::size_t>(window), losses.size() - start);
    out.push_back(roughness(losses.subspan(start, len), opts));
  }
  return out;
}

Vector layer_normalized_direction(const Vector& center, const BlockList& blocks, Rng& rng) {
  Vector raw(center.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw(i) = rng.normal();
  Vector d = raw;
  for (const auto& [begin, end] : blocks) {
    auto block = d.segment(begin, end - begin);
    const double dn = block.norm();
    const double cn = center.segment(begin, end - begin).norm();
    if (dn > 0.0) block *= cn / dn;
  }
  const double norm = d.norm();
  if (!(norm > 0.0)) return raw / raw.norm();
  return d / norm;
}

double SliceGrid::coordinate(int i) const {
  if (resolution < 2) return 0.0;
  return -radius + 2.0 * radius * static_cast<double>(i) / static_cast<double>(resolution - 1);
}

SliceGrid slice(const Objective& f, const Vector& center, const BlockList& blocks, int dims, double radius,
                int resolution, std::uint64_t direction_seed) {
  if (dims != 1 && dims != 2) throw std::invalid_argument("slice: dims must be 1 or 2");
  if (resolution < 3 || resolution % 2 == 0) throw std::invalid_argument("slice: resolution must be odd and >= 3");
  if (!(radius >= 0.0)) throw std::invalid_argument("slice: radius must be >= 0");
  Rng rng(direction_seed);
  SliceGrid g;
  g.center = center;
  g.radius = radius;
  g.resolution = resolution;
  g.direction_seed = direction_seed;
  g.directions.push_back(layer_normalized_direction(center, blocks, rng));
  if (dims == 2) {
    Vector d2 = layer_normalized_direction(center, blocks, rng);
    d2 -= d2.dot(g.directions[0]) * g.directions[0];
    g.directions.push_back(d2 / d2.norm());
  }
  const int mid = resolution / 2;
  if (dims == 1) {
    for (int i = 0; i < resolution; ++i)
      g.values.push_back(i == mid ? f.value(center) : f.value(center + g.coordinate(i) * g.directions[0]));
  } else {
    for (int i = 0; i < resolution; ++i)
      for (int j = 0; j < resolution; ++j)
        g.values.push_back(i == mid && j == mid
                               ? f.value(center)
                               : f.value(center + g.coordinate(i) * g.directions[0] +
                                         g.coordinate(j) * g.directions[1]));
  }
  return g;
}

int count_local_minima(std::span<const double> values) {
  int count = 0;
  for (std::size_t i = 1; i + 1 < values.size(); ++i)
    if (values[i] < values[i - 1] && values[i] < values[i + 1]) ++count;
  return count;
}

MinimaStats local_minima_statistics(const Objective& f, const Vector& center, const BlockList& blocks, int slices,
                                    double radius, int resolution, std::uint64_t seed) {
  if (slices < 1) throw std::invalid_argument("local_minima_statistics: slices must be >= 1");
  std::vector<double> counts;
  for (int s = 0; s < slices; ++s) {
    const auto g = slice(f, center, blocks, 1, radius, resolution, derive_seed({seed, static_cast<std::uint64_t>(s)}));
    counts.push_back(count_local_minima(g.values));
  }
  MinimaStats st;
  st.mean = mean(counts);
  double var = 0.0;
  for (double c : counts) var += (c - st.mean) * (c - st.mean);
  st.sd = counts.size() > 1 ? std::sqrt(var / static_cast<double>(counts.size() - 1)) : 0.0;
  st.slices = slices;
  st.radius = radius;
  st.resolution = resolution;
  return st;
}

double trajectory_length(std::span<const Vector> snapshots) {
  if (snapshots.size() < 2) throw std::invalid_argument("trajectory_length: need at least two snapshots");
  double total = 0.0;
  for (std::size_t t = 1; t < snapshots.size(); ++t) total += (snapshots[t] - snapshots[t - 1]).norm();
  return total;
}

LinearOperator hessian_operator(const Objective& f, const Vector& at) {
  return [&f, at](const Vector& v) { return f.hvp(at, v); };
}

TraceEstimate hessian_trace(const LinearOperator& h, Eigen::Index n, int probes, Rng& rng) {
  if (probes < 1) throw std::invalid_argument("hessian_trace: probes must be >= 1");
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(probes));
  Vector v(n);
  for (int p = 0; p < probes; ++p) {
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.rademacher();
    samples.push_back(v.dot(h(v)));
  }
  return {mean(samples), standard_error(samples), probes};
}

std::optional<double> condition_number(double lambda_max, double lambda_min) {
  if (std::abs(lambda_min) < kUnboundedRatio * std::abs(lambda_max) || lambda_min == 0.0) return std::nullopt;
  return lambda_max / lambda_min;
}

namespace {

struct PowerResult {
  double eigenvalue = 0.0;
  double delta = 0.0;
  int iterations = 0;
};

PowerResult power_iteration(const LinearOperator& op, Eigen::Index n, int iters, Rng& rng, double stop_tolerance) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  v.normalize();
  PowerResult r;
  double previous = std::numeric_limits<double>::quiet_NaN();
  r.delta = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iters; ++it) {
    const Vector w = op(v);
    const double rq = v.dot(w);
    const double norm = w.norm();
    r.iterations = it + 1;
    if (!(norm > 0.0)) {
      // v lies in the null space.
      r.eigenvalue = 0.0;
      r.delta = 0.0;
      return r;
    }
    v = w / norm;
    if (!std::isnan(previous)) r.delta = std::abs(rq - previous) / std::max(std::abs(rq), 1e-300);
    r.eigenvalue = rq;
    previous = rq;
    if (r.delta < stop_tolerance) break;
  }
  return r;
}

}  // namespace

SpectralEstimate spectral_extremes(const LinearOperator& h, Eigen::Index n, int iters, Rng& rng,
                                   double stop_tolerance) {
  if (iters < 10) throw std::invalid_argument("spectral_extremes: iters must be >= 10");
  const auto dominant = power_iteration(h, n, iters, rng, stop_tolerance);
  const double shift = dominant.eigenvalue;
  const LinearOperator shifted = [&h, shift](const Vector& v) { return Vector(h(v) - shift * v); };
  const auto opposite = power_iteration(shifted, n, iters, rng, stop_tolerance);
  const double other = opposite.eigenvalue + shift;

  SpectralEstimate s;
  s.lambda_max = std::max(dominant.eigenvalue, other);
  s.lambda_min = std::min(dominant.eigenvalue, other);
  s.spectral_norm = std::max(std::abs(s.lambda_max), std::abs(s.lambda_min));
  s.condition = condition_number(s.lambda_max, s.lambda_min);
  // The shifted pass reports its change relative to the shifted eigenvalue; rescale
  // it to the unshifted one so both deltas mean the same thing.
  const double opposite_delta =
      opposite.delta * std::abs(opposite.eigenvalue) / std::max(std::abs(other), 1e-300);
  s.last_delta = std::max(dominant.delta, opposite_delta);
  s.converged = s.last_delta <= kConvergenceTolerance;
  s.iterations = dominant.iterations + opposite.iterations;
  return s;
}

std::optional<double> relative_delta(std::optional<double> meta, std::optional<double> baseline) {
  if (!meta || !baseline || *baseline == 0.0) return std::nullopt;
  return (*meta - *baseline) / std::abs(*baseline);
}

CurvatureDelta curvature_delta(const CurvatureReport& meta, const CurvatureReport& baseline) {
  return {relative_delta(meta.trace, baseline.trace), relative_delta(meta.roughness, baseline.roughness),
          relative_delta(meta.spectral_norm, baseline.spectral_norm),
          relative_delta(meta.condition, baseline.condition)};
}

void write_slice_grid(const std::filesystem::path& path, const SliceGrid& grid) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  Fnv1a h;
  h.update(grid.center.data(), static_cast<std::size_t>(grid.center.size()) * sizeof(double));
  out << "# center_hash=" << h.hex() << '\n'
      << "# directions_seed=" << grid.direction_seed << '\n'
      << "# radius=" << format_double(grid.radius) << '\n'
      << "# resolution=" << grid.resolution << '\n'
      << "# dims=" << grid.dims() << '\n';
  const int rows = grid.dims() == 2 ? grid.resolution : 1;
  const int cols = grid.resolution;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (j) out << ',';
      out << format_double(grid.values[static_cast<std::size_t>(i) * cols + j]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v, const char* sentinel) {
  if (v) return *v;
  return sentinel;
}

}  // namespace

std::string curvature_report_json(const CurvatureReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["F"] = r.features;
  j["D"] = r.max_depth;
  j["tasks"] = r.tasks;
  j["loss_source"] = r.loss_source;
  j["roughness"] = r.roughness;
  j["roughness_stderr"] = r.roughness_stderr;
  j["hessian_trace"] = r.trace;
  j["hessian_trace_stderr"] = r.trace_stderr;
  j["spectral_norm"] = r.spectral_norm;
  j["lambda_max"] = r.lambda_max;
  j["lambda_min"] = r.lambda_min;
  j["condition_number"] = optional_number(r.condition, "Unbounded");
  j["nonconverged_spectral"] = r.nonconverged;
  j["minima_mean"] = r.minima_mean;
  j["minima_sd"] = r.minima_sd;
  j["trajectory_length"] = r.trajectory_length;
  j["trajectory_length_matched_loss"] = r.trajectory_length_matched_loss;
  j["trajectory_length_matched_samples"] = r.trajectory_length_matched_samples;
  j["probes"] = r.probes;
  j["power_iters"] = r.power_iters;
  j["minima_slices"] = r.minima_slices;
  j["minima_radius"] = r.minima_radius;
  j["minima_resolution"] = r.minima_resolution;
  return j.dump();
}

std::string curvature_delta_json(const CurvatureReport& meta, const CurvatureReport& baseline,
                                 const CurvatureDelta& d) {
  nlohmann::ordered_json j;
  j["meta_method"] = meta.method;
  j["baseline_method"] = baseline.method;
  j["F"] = meta.features;
  j["D"] = meta.max_depth;
  j["delta_trace"] = optional_number(d.trace, "Undefined");
  j["delta_roughness"] = optional_number(d.roughness, "Undefined");
  j["delta_spectral_norm"] = optional_number(d.spectral_norm, "Undefined");
  j["delta_condition"] = optional_number(d.condition, "Undefined");
  return j.dump();
}

}  // namespace boolmeta
