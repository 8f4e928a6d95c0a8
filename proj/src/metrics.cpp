#include "boolmeta/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace boolmeta {

std::optional<std::string> check_trace(const RunTrace& trace) {
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    if (!(r.query_acc >= 0.0 && r.query_acc <= 1.0)) return "accuracy outside [0,1] at record " + std::to_string(i);
    if (i > 0) {
      const auto& prev = trace.records[i - 1];
      if (r.episode <= prev.episode) return "episode index not strictly increasing at record " + std::to_string(i);
      if (r.cum_samples < prev.cum_samples) return "cumulative samples decrease at record " + std::to_string(i);
    }
  }
  return std::nullopt;
}

std::optional<std::int64_t> samples_to_threshold(const RunTrace& trace, double threshold, int window) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("samples_to_threshold: threshold not in (0,1)");
  if (window < 1) throw std::invalid_argument("samples_to_threshold: window must be >= 1");
  const auto& rs = trace.records;
  double running = 0.0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    running += rs[i].query_acc;
    if (i >= static_cast<std::size_t>(window)) running -= rs[i - window].query_acc;
    const auto count = static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
    if (running / count >= threshold) return rs[i].cum_samples;
  }
  return std::nullopt;
}

double auc(const RunTrace& trace) {
  const auto& rs = trace.records;
  if (rs.size() < 2) throw std::invalid_argument("auc: need at least two records");
  const double first = static_cast<double>(rs.front().episode);
  const double span = static_cast<double>(rs.back().episode) - first;
  if (!(span > 0.0)) throw std::invalid_argument("auc: episode range is empty");
  double area = 0.0;
  for (std::size_t i = 1; i < rs.size(); ++i) {
    const double x0 = (static_cast<double>(rs[i - 1].episode) - first) / span;
    const double x1 = (static_cast<double>(rs[i].episode) - first) / span;
    area += 0.5 * (x1 - x0) * (rs[i - 1].query_acc + rs[i].query_acc);
  }
  return area;
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  // Shifted by the first value so identical inputs give that value exactly.
  const double base = values.front();
  double acc = 0.0;
  for (double v : values) acc += v - base;
  return base + acc / static_cast<double>(values.size());
}

double standard_error(const std::vector<double>& values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

CellSummary aggregate(const std::vector<RunTrace>& traces, double threshold) {
  if (traces.empty()) throw std::invalid_argument("aggregate: no traces");
  // Seed order must not matter, so work on a seed-sorted copy of the pointers.
  std::vector<const RunTrace*> sorted;
  for (const auto& t : traces) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](const RunTrace* a, const RunTrace* b) { return a->seed < b->seed; });

  const RunTrace& ref = *sorted.front();
  for (const RunTrace* t : sorted) {
    if (!(t->cell == ref.cell)) throw std::invalid_argument("aggregate: traces come from different cells");
    if (t->records.size() != ref.records.size())
      throw std::invalid_argument("aggregate: traces have different record counts");
    for (std::size_t i = 0; i < ref.records.size(); ++i)
      if (t->records[i].episode != ref.records[i].episode)
        throw std::invalid_argument("aggregate: record grids are not aligned");
  }

  CellSummary s;
  s.cell = ref.cell;
  s.seed_count = static_cast<int>(sorted.size());
  s.threshold = threshold;
  const std::size_t len = ref.records.size();
  std::vector<double> column(sorted.size());
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t k = 0; k < sorted.size(); ++k) column[k] = sorted[k]->records[i].query_acc;
    s.episodes.push_back(ref.records[i].episode);
    s.cum_samples.push_back(ref.records[i].cum_samples);
    s.mean_accuracy.push_back(mean(column));
    s.stderr_accuracy.push_back(standard_error(column));
  }

  std::vector<double> finals, aucs, reached;
  for (const RunTrace* t : sorted) {
    SeedScalars sc;
    sc.seed = t->seed;
    sc.final_accuracy = t->records.empty() ? 0.0 : t->records.back().query_acc;
    sc.auc = t->records.size() >= 2 ? auc(*t) : sc.final_accuracy;
    sc.samples_to_threshold = samples_to_threshold(*t, threshold);
    finals.push_back(sc.final_accuracy);
    aucs.push_back(sc.auc);
    if (sc.samples_to_threshold)
      reached.push_back(static_cast<double>(*sc.samples_to_threshold));
    else
      ++s.not_reached_count;
    s.per_seed.push_back(sc);
  }
  s.final_accuracy = mean(finals);
  s.final_accuracy_stderr = standard_error(finals);
  s.mean_auc = mean(aucs);
  if (!reached.empty()) s.mean_samples_to_threshold = mean(reached);
  return s;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

constexpr const char* kTraceHeader =
    "method,F,D,K,order,seed,episode,cum_samples,support_loss,query_loss,query_acc";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  T value{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  return value;
}

}  // namespace

void write_trace_csv(const std::filesystem::path& path, const RunTrace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kTraceHeader << '\n';
  const auto& c = trace.cell;
  for (const auto& r : trace.records) {
    out << c.method << ',' << c.features << ',' << c.max_depth << ',' << c.adapt_steps << ',' << c.order << ','
        << trace.seed << ',' << r.episode << ',' << r.cum_samples << ',' << format_double(r.support_loss) << ','
        << format_double(r.query_loss) << ',' << format_double(r.query_acc) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

RunTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader)
    throw std::runtime_error(path.string() + ": missing or unexpected trace header");
  RunTrace trace;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 11 fields");
    CellId cell{f[0], parse_number<int>(f[1], path, lineno), parse_number<int>(f[2], path, lineno),
                parse_number<int>(f[3], path, lineno), f[4]};
    const auto seed = parse_number<std::uint64_t>(f[5], path, lineno);
    if (trace.records.empty()) {
      trace.cell = cell;
      trace.seed = seed;
    } else if (!(cell == trace.cell) || seed != trace.seed) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": mixed cells in one trace");
    }
    trace.records.push_back({parse_number<std::int64_t>(f[6], path, lineno),
                             parse_number<std::int64_t>(f[7], path, lineno), parse_number<double>(f[8], path, lineno),
                             parse_number<double>(f[9], path, lineno), parse_number<double>(f[10], path, lineno)});
  }
  return trace;
}

}  // namespace boolmeta
