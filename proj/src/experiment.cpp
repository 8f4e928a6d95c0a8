#include "boolmeta/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "boolmeta/hash.hpp"
#include "boolmeta/metrics.hpp"
#include "json.hpp"

namespace boolmeta {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

ExperimentConfig profile_config(const std::string& name) {
  ExperimentConfig c;
  c.profile = name;
  if (name == "desk") {
    c.cells = {{8, 3}, {16, 5}};
    c.regimes = {{Regime::Sgd, 0}, {Regime::MetaSgdFirst, 1}, {Regime::MetaSgdSecond, 1}};
    c.seeds = {0, 1};
    c.optim.meta_episodes = 2000;
    c.eval_tasks = 200;
    c.landscape.tasks = 20;
  } else if (name == "paper") {
    for (int f : {8, 16, 32})
      for (int d : {3, 5, 7}) c.cells.push_back({f, d});
    c.regimes = {{Regime::Sgd, 0},
                 {Regime::MetaSgdFirst, 1},
                 {Regime::MetaSgdFirst, 10},
                 {Regime::MetaSgdSecond, 1},
                 {Regime::MetaSgdSecond, 10}};
    c.seeds = {0, 1, 2, 3, 4};
    c.optim.meta_episodes = 10000;
    c.eval_tasks = 1000;
    c.landscape.tasks = 50;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (cells.empty()) fail("cells must not be empty");
  for (const auto& c : cells) {
    GrammarConfig g;
    g.features = c.features;
    g.max_depth = c.max_depth;
    g.probs = probs;
    try {
      g.validate();
    } catch (const std::invalid_argument& e) {
      fail(std::string("cell: ") + e.what());
    }
  }
  if (regimes.empty()) fail("regimes must not be empty");
  for (const auto& r : regimes)
    if (r.adapt_steps < 0) fail("regime K must be >= 0");
  if (seeds.empty()) fail("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
  if (eval_tasks < 1) fail("eval_tasks must be >= 1");
  for (int k : eval_adapt_steps)
    if (k < 0) fail("eval_adapt_steps entries must be >= 0");
  if (generate_train_batches < 0) fail("generate_train_batches must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0, 1)");
  try {
    optim.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (optim.shape.support_per_class < 1 || optim.shape.query_per_class < 1 || optim.shape.input_budget < 1)
    fail("episode quotas and input budget must be >= 1");
  if (hidden_width < 1 || hidden_layers < 1) fail("architecture sizes must be >= 1");
  const auto& l = landscape;
  if (l.tasks < 0 || l.probes < 1 || l.power_iters < 10 || l.minima_slices < 1) fail("landscape counts out of range");
  if (l.minima_resolution < 3 || l.minima_resolution % 2 == 0 || l.slice_resolution < 3 ||
      l.slice_resolution % 2 == 0)
    fail("landscape resolutions must be odd and >= 3");
  if (!(l.minima_radius >= 0.0) || !(l.slice_radius >= 0.0)) fail("landscape radii must be >= 0");
  if (l.roughness_window < 3) fail("roughness_window must be >= 3");
  if (l.loss_source != "query" && l.loss_source != "support") fail("loss_source must be query or support");
  if (workers < 1) fail("workers must be >= 1");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read_int(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
  if constexpr (std::is_unsigned_v<T>) {
    if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
      dst = v.get<T>();
      return;
    }
    throw ConfigError(std::string("'") + key + "' must be non-negative");
  } else {
    dst = v.get<T>();
  }
}

void read_double(const json& j, const char* key, double& dst) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  dst = j.at(key).get<double>();
}

void read_string(const json& j, const char* key, std::string& dst) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
  dst = j.at(key).get<std::string>();
}

void apply_overrides(const json& j, ExperimentConfig& c) {
  check_keys(j,
             {"profile", "cells", "regimes", "seeds", "seed_offset", "eval_tasks", "eval_adapt_steps",
              "generate_train_batches", "threshold", "meta_episodes", "meta_batch", "outer_lr", "baseline_lr",
              "baseline_steps", "alpha_init", "alpha_min", "alpha_max", "snapshot_stride", "hessian_depth",
              "max_concept_attempts", "grammar", "architecture", "episodes", "landscape", "workers", "out"},
             "config");
  if (j.contains("cells")) {
    if (!j["cells"].is_array()) throw ConfigError("'cells' must be an array");
    c.cells.clear();
    for (const auto& cell : j["cells"]) {
      check_keys(cell, {"F", "D"}, "cells[]");
      if (!cell.contains("F") || !cell.contains("D")) throw ConfigError("cells[] entries need F and D");
      CellSpec s;
      read_int(cell, "F", s.features);
      read_int(cell, "D", s.max_depth);
      c.cells.push_back(s);
    }
  }
  if (j.contains("regimes")) {
    if (!j["regimes"].is_array()) throw ConfigError("'regimes' must be an array");
    c.regimes.clear();
    for (const auto& r : j["regimes"]) {
      check_keys(r, {"regime", "K"}, "regimes[]");
      std::string name;
      read_string(r, "regime", name);
      RegimeSpec s;
      try {
        s.regime = regime_from_string(name);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      s.adapt_steps = s.regime == Regime::Sgd ? 0 : 1;
      read_int(r, "K", s.adapt_steps);
      c.regimes.push_back(s);
    }
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) throw ConfigError("'seeds' must be an array");
    c.seeds.clear();
    for (const auto& s : j["seeds"]) {
      if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<std::int64_t>() < 0))
        throw ConfigError("seeds must be non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (j.contains("eval_adapt_steps")) {
    if (!j["eval_adapt_steps"].is_array()) throw ConfigError("'eval_adapt_steps' must be an array");
    c.eval_adapt_steps.clear();
    for (const auto& k : j["eval_adapt_steps"]) {
      if (!k.is_number_integer()) throw ConfigError("eval_adapt_steps entries must be integers");
      c.eval_adapt_steps.push_back(k.get<int>());
    }
  }
  read_int(j, "seed_offset", c.seed_offset);
  read_int(j, "eval_tasks", c.eval_tasks);
  read_int(j, "generate_train_batches", c.generate_train_batches);
  read_double(j, "threshold", c.threshold);
  read_int(j, "meta_episodes", c.optim.meta_episodes);
  read_int(j, "meta_batch", c.optim.meta_batch);
  read_double(j, "outer_lr", c.optim.outer_lr);
  read_double(j, "baseline_lr", c.optim.baseline_lr);
  read_int(j, "baseline_steps", c.optim.baseline_steps);
  read_double(j, "alpha_init", c.optim.alpha_init);
  read_double(j, "alpha_min", c.optim.alpha_min);
  read_double(j, "alpha_max", c.optim.alpha_max);
  read_int(j, "snapshot_stride", c.optim.snapshot_stride);
  read_int(j, "hessian_depth", c.optim.hessian_depth);
  read_int(j, "max_concept_attempts", c.optim.max_concept_attempts);
  read_int(j, "workers", c.workers);
  if (j.contains("out")) {
    std::string out;
    read_string(j, "out", out);
    c.out = out;
  }
  if (j.contains("grammar")) {
    const auto& g = j["grammar"];
    check_keys(g, {"p_literal", "p_not", "p_and", "p_or"}, "grammar");
    read_double(g, "p_literal", c.probs.literal);
    read_double(g, "p_not", c.probs.negation);
    read_double(g, "p_and", c.probs.conjunction);
    read_double(g, "p_or", c.probs.disjunction);
  }
  if (j.contains("architecture")) {
    const auto& a = j["architecture"];
    check_keys(a, {"hidden_width", "hidden_layers"}, "architecture");
    read_int(a, "hidden_width", c.hidden_width);
    read_int(a, "hidden_layers", c.hidden_layers);
  }
  if (j.contains("episodes")) {
    const auto& e = j["episodes"];
    check_keys(e, {"support_per_class", "query_per_class", "input_budget"}, "episodes");
    read_int(e, "support_per_class", c.optim.shape.support_per_class);
    read_int(e, "query_per_class", c.optim.shape.query_per_class);
    read_int(e, "input_budget", c.optim.shape.input_budget);
  }
  if (j.contains("landscape")) {
    const auto& l = j["landscape"];
    check_keys(l,
               {"tasks", "probes", "power_iters", "minima_slices", "minima_radius", "minima_resolution",
                "slice_resolution", "slice_radius", "roughness_window", "loss_source"},
               "landscape");
    auto& o = c.landscape;
    read_int(l, "tasks", o.tasks);
    read_int(l, "probes", o.probes);
    read_int(l, "power_iters", o.power_iters);
    read_int(l, "minima_slices", o.minima_slices);
    read_double(l, "minima_radius", o.minima_radius);
    read_int(l, "minima_resolution", o.minima_resolution);
    read_int(l, "slice_resolution", o.slice_resolution);
    read_double(l, "slice_radius", o.slice_radius);
    read_int(l, "roughness_window", o.roughness_window);
    read_string(l, "loss_source", o.loss_source);
  }
}

ordered_json config_object(const ExperimentConfig& c) {
  ordered_json j;
  j["profile"] = c.profile;
  j["cells"] = ordered_json::array();
  for (const auto& cell : c.cells) j["cells"].push_back({{"F", cell.features}, {"D", cell.max_depth}});
  j["regimes"] = ordered_json::array();
  for (const auto& r : c.regimes) j["regimes"].push_back({{"regime", to_string(r.regime)}, {"K", r.adapt_steps}});
  j["seeds"] = c.seeds;
  j["seed_offset"] = c.seed_offset;
  j["eval_tasks"] = c.eval_tasks;
  j["eval_adapt_steps"] = c.eval_adapt_steps;
  j["generate_train_batches"] = c.generate_train_batches;
  j["threshold"] = c.threshold;
  j["meta_episodes"] = c.optim.meta_episodes;
  j["meta_batch"] = c.optim.meta_batch;
  j["outer_lr"] = c.optim.outer_lr;
  j["baseline_lr"] = c.optim.baseline_lr;
  j["baseline_steps"] = c.optim.baseline_steps;
  j["alpha_init"] = c.optim.alpha_init;
  j["alpha_min"] = c.optim.alpha_min;
  j["alpha_max"] = c.optim.alpha_max;
  j["snapshot_stride"] = c.optim.snapshot_stride;
  j["hessian_depth"] = c.optim.hessian_depth;
  j["max_concept_attempts"] = c.optim.max_concept_attempts;
  j["grammar"] = {{"p_literal", c.probs.literal},
                  {"p_not", c.probs.negation},
                  {"p_and", c.probs.conjunction},
                  {"p_or", c.probs.disjunction}};
  j["architecture"] = {{"hidden_width", c.hidden_width}, {"hidden_layers", c.hidden_layers}};
  j["episodes"] = {{"support_per_class", c.optim.shape.support_per_class},
                   {"query_per_class", c.optim.shape.query_per_class},
                   {"input_budget", c.optim.shape.input_budget}};
  const auto& l = c.landscape;
  j["landscape"] = {{"tasks", l.tasks},
                    {"probes", l.probes},
                    {"power_iters", l.power_iters},
                    {"minima_slices", l.minima_slices},
                    {"minima_radius", l.minima_radius},
                    {"minima_resolution", l.minima_resolution},
                    {"slice_resolution", l.slice_resolution},
                    {"slice_radius", l.slice_radius},
                    {"roughness_window", l.roughness_window},
                    {"loss_source", l.loss_source}};
  j["workers"] = c.workers;
  j["out"] = c.out.string();
  return j;
}

// The part of the config that determines results; scheduling and location excluded.
ordered_json result_config(const ExperimentConfig& c) {
  auto j = config_object(c);
  j.erase("workers");
  j.erase("out");
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::optional<std::string>& profile_override) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string base = "desk";
  read_string(j, "profile", base);
  if (profile_override) base = *profile_override;
  auto cfg = profile_config(base);
  try {
    apply_overrides(j, cfg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path, const std::optional<std::string>& profile_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), profile_override);
}

std::string config_to_json(const ExperimentConfig& cfg) { return config_object(cfg).dump(2); }

// ---------------------------------------------------------------------------
// Jobs, seeds, paths
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kTrainTag = 0x747261696eULL;  // "train"
constexpr std::uint64_t kEvalTag = 0x6576616cULL;     // "eval"
constexpr std::uint64_t kInitTag = 0x696e6974ULL;     // "init"
constexpr std::uint64_t kProbeTag = 0x70726f6265ULL;  // "probe"
constexpr std::uint64_t kSliceTag = 0x736c696365ULL;  // "slice"

}  // namespace

JobSeeds job_seeds(const ExperimentConfig& cfg, const CellSpec& cell, std::uint64_t seed) {
  JobSeeds s;
  s.effective = seed + cfg.seed_offset;
  const auto f = static_cast<std::uint64_t>(cell.features), d = static_cast<std::uint64_t>(cell.max_depth);
  s.train = derive_seed({s.effective, f, d, kTrainTag});
  s.eval = derive_seed({s.effective, f, d, kEvalTag});
  s.init = derive_seed({s.effective, f, d, kInitTag});
  return s;
}

Architecture architecture(const ExperimentConfig& cfg, const CellSpec& cell) {
  return Architecture{cell.features, cfg.hidden_width, cfg.hidden_layers};
}

RegimeConfig regime_config(const ExperimentConfig& cfg, const RegimeSpec& spec) {
  RegimeConfig r = cfg.optim;
  r.regime = spec.regime;
  r.adapt_steps = spec.adapt_steps;
  return r;
}

GrammarConfig grammar_config(const ExperimentConfig& cfg, const CellSpec& cell, std::uint64_t stream_seed) {
  GrammarConfig g;
  g.features = cell.features;
  g.max_depth = cell.max_depth;
  g.probs = cfg.probs;
  g.seed = stream_seed;
  return g;
}

std::vector<Episode> eval_episodes(const ExperimentConfig& cfg, const CellSpec& cell, std::uint64_t seed,
                                   int count) {
  const auto g = grammar_config(cfg, cell, job_seeds(cfg, cell, seed).eval);
  std::vector<Episode> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i)
    out.push_back(make_indexed_episode(g, static_cast<std::uint64_t>(i), cfg.optim.max_concept_attempts,
                                       cfg.optim.shape));
  return out;
}

std::uint64_t baseline_seed(const JobSeeds& seeds, int task) {
  return derive_seed({seeds.init, static_cast<std::uint64_t>(task)});
}

std::vector<JobSpec> expand_jobs(const ExperimentConfig& cfg) {
  std::vector<JobSpec> jobs;
  for (const auto& cell : cfg.cells)
    for (const auto& r : cfg.regimes)
      for (auto s : cfg.seeds) jobs.push_back({cell, r, s});
  return jobs;
}

std::string cell_name(const CellSpec& cell) {
  return "F" + std::to_string(cell.features) + "_D" + std::to_string(cell.max_depth);
}

fs::path job_dir(const ExperimentConfig& cfg, const JobSpec& job) {
  return cfg.out / cell_name(job.cell) / method_id(regime_config(cfg, job.regime)) /
         ("seed" + std::to_string(job.seed));
}

double matched_loss_length(std::span<const Vector> trajectory, std::span<const TraceRecord> records,
                           double target_loss) {
  if (trajectory.size() < 2) return 0.0;
  std::size_t stop = trajectory.size();
  for (std::size_t i = 0; i < records.size() && i < trajectory.size(); ++i)
    if (records[i].support_loss <= target_loss) {
      stop = i + 1;
      break;
    }
  if (stop < 2) return 0.0;
  return trajectory_length(trajectory.subspan(0, stop));
}

// ---------------------------------------------------------------------------
// Shared file helpers
// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Results are append-only: identical content is left alone, different content is refused.
void write_result(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) {
    if (read_text(path) == content) return;
    throw DataError("refusing to overwrite existing result " + path.string());
  }
  write_text(path, content);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string order_name(const RegimeSpec& r) {
  return r.regime == Regime::Sgd ? "none" : to_string(regime_config(ExperimentConfig{}, r).order());
}

void write_snapshots(const fs::path& path, const std::vector<Vector>& snapshots) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const char magic[8] = {'B', 'M', 'S', 'N', 'A', 'P', 'S', '1'};
  out.write(magic, sizeof(magic));
  const std::uint64_t count = snapshots.size();
  const std::uint64_t n = snapshots.empty() ? 0 : static_cast<std::uint64_t>(snapshots.front().size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& s : snapshots)
    out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

struct EvalRow {
  int task = 0;
  int literals = 0;
  int adapt_steps = 0;
  double query_acc = 0.0;
};

constexpr const char* kEvalHeader = "task,literals,class,adapt_steps,query_acc";

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << kEvalHeader << '\n';
  for (const auto& r : rows)
    out << r.task << ',' << r.literals << ',' << to_string(classify(r.literals)) << ',' << r.adapt_steps << ','
        << format_double(r.query_acc) << '\n';
  return out.str();
}

std::vector<EvalRow> read_eval_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kEvalHeader) throw DataError(path.string() + ": unexpected eval header");
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 5) throw DataError(path.string() + ": malformed eval row");
    try {
      rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed eval row");
    }
  }
  return rows;
}

double mean_at(const std::vector<EvalRow>& rows, int k, int* count = nullptr) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.adapt_steps == k) v.push_back(r.query_acc);
  if (count) *count = static_cast<int>(v.size());
  return mean(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  for (const auto& cell : cfg.cells) {
    for (auto seed : cfg.seeds) {
      const auto seeds = job_seeds(cfg, cell, seed);
      const fs::path dir = cfg.out / "corpus" / cell_name(cell) / ("seed" + std::to_string(seed));
      fs::create_directories(dir);
      std::string eval_lines, train_lines;
      try {
        for (const auto& e : eval_episodes(cfg, cell, seed, cfg.eval_tasks)) eval_lines += serialize_episode(e) + "\n";
        const auto g = grammar_config(cfg, cell, seeds.train);
        for (int b = 0; b < cfg.generate_train_batches; ++b)
          for (const auto& e : make_batch(g, static_cast<std::uint64_t>(b), cfg.optim.meta_batch,
                                          cfg.optim.max_concept_attempts, cfg.optim.shape)
                                   .episodes)
            train_lines += serialize_episode(e) + "\n";
      } catch (const DegenerateConceptSpace& e) {
        throw DataError("cell " + cell_name(cell) + ": " + e.what());
      }
      ordered_json stream;
      stream["F"] = cell.features;
      stream["D"] = cell.max_depth;
      stream["seed"] = seed;
      stream["effective_seed"] = seeds.effective;
      stream["train_seed"] = seeds.train;
      stream["eval_seed"] = seeds.eval;
      stream["meta_batch"] = cfg.optim.meta_batch;
      stream["train_batches_written"] = cfg.generate_train_batches;
      stream["eval_tasks"] = cfg.eval_tasks;
      write_result(dir / "eval.jsonl", eval_lines);
      write_result(dir / "train.jsonl", train_lines);
      write_result(dir / "stream.json", stream.dump(2) + "\n");
      log << "generated " << dir.string() << '\n';
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

struct JobOutcome {
  int code = kExitOk;
  bool skipped = false;
  std::string message;
};

// Returns an empty string when every file listed in job.json hashes as recorded.
std::string verify_job(const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "job.json"));
  } catch (const std::exception& e) {
    return std::string("unreadable job.json: ") + e.what();
  }
  if (!j.contains("files") || !j["files"].is_object()) return "job.json lists no files";
  for (auto it = j["files"].begin(); it != j["files"].end(); ++it) {
    const fs::path f = dir / it.key();
    if (!fs::exists(f)) return "missing " + it.key();
    if (hash_file(f) != it.value().get<std::string>()) return "hash mismatch for " + it.key();
  }
  return {};
}

void run_job(const ExperimentConfig& cfg, const JobSpec& job, const fs::path& dir) {
  const auto seeds = job_seeds(cfg, job.cell, job.seed);
  const auto rc = regime_config(cfg, job.regime);
  const auto arch = architecture(cfg, job.cell);
  const auto tasks = eval_episodes(cfg, job.cell, job.seed, cfg.eval_tasks);
  ordered_json meta;
  meta["method"] = method_id(rc);
  meta["regime"] = to_string(rc.regime);
  meta["F"] = job.cell.features;
  meta["D"] = job.cell.max_depth;
  meta["K"] = rc.regime == Regime::Sgd ? 0 : rc.adapt_steps;
  meta["order"] = order_name(job.regime);
  meta["seed"] = job.seed;
  meta["effective_seed"] = seeds.effective;
  meta["seeds"] = {{"train", seeds.train}, {"eval", seeds.eval}, {"init", seeds.init}};

  std::vector<EvalRow> rows;
  std::vector<std::string> files;
  ordered_json evals = ordered_json::array();
  if (rc.regime == Regime::Sgd) {
    // The regime's learning curve is the mean over held-out tasks of the
    // per-step baseline records.
    RunTrace mean_trace;
    mean_trace.cell = cell_id(rc, job.cell.features, job.cell.max_depth);
    mean_trace.seed = seeds.effective;
    std::vector<TraceRecord> sums;
    std::vector<double> finals;
    for (int i = 0; i < static_cast<int>(tasks.size()); ++i) {
      const auto run = eval_baseline(rc, tasks[i], arch, baseline_seed(seeds, i), false);
      if (sums.empty()) sums.resize(run.trace.records.size());
      for (std::size_t k = 0; k < sums.size(); ++k) {
        const auto& r = run.trace.records[k];
        sums[k].episode = r.episode;
        sums[k].cum_samples = r.cum_samples;
        sums[k].support_loss += r.support_loss;
        sums[k].query_loss += r.query_loss;
        sums[k].query_acc += r.query_acc;
      }
      finals.push_back(run.trace.records.back().query_acc);
      rows.push_back({i, concept_stats(tasks[i].target).literal_count, rc.baseline_steps, finals.back()});
    }
    const double inv = 1.0 / static_cast<double>(tasks.size());
    for (auto& r : sums) {
      r.support_loss *= inv;
      r.query_loss *= inv;
      r.query_acc *= inv;
    }
    mean_trace.records = std::move(sums);
    write_trace_csv(dir / "trace.csv", mean_trace);
    files = {"trace.csv", "eval.csv"};
    evals.push_back({{"adapt_steps", rc.baseline_steps},
                     {"mean", mean(finals)},
                     {"stderr", standard_error(finals)},
                     {"tasks", finals.size()}});
  } else {
    auto result = meta_train(rc, grammar_config(cfg, job.cell, seeds.train), arch, seeds.init);
    result.trace.seed = seeds.effective;
    write_trace_csv(dir / "trace.csv", result.trace);
    write_checkpoint(dir / "theta_init.bin", ParamSet(arch, result.state.theta_init), seeds.init);
    write_checkpoint(dir / "alpha.bin", ParamSet(arch, result.state.alpha), seeds.init);
    write_snapshots(dir / "snapshots.bin", result.trace.snapshots);
    files = {"trace.csv", "eval.csv", "theta_init.bin", "alpha.bin", "snapshots.bin"};
    std::set<int> ks(cfg.eval_adapt_steps.begin(), cfg.eval_adapt_steps.end());
    ks.insert(rc.adapt_steps);
    for (int k : ks) {
      const auto ev = meta_eval(result.state, tasks, k);
      for (std::size_t i = 0; i < tasks.size(); ++i)
        rows.push_back({static_cast<int>(i), concept_stats(tasks[i].target).literal_count, k, ev.accuracies[i]});
      evals.push_back({{"adapt_steps", k}, {"mean", ev.mean}, {"stderr", ev.stderr_mean}, {"tasks", tasks.size()}});
    }
    meta["outer_steps"] = result.state.outer_steps;
    meta["outer_trajectory_length"] =
        result.trace.snapshots.size() >= 2 ? trajectory_length(result.trace.snapshots) : 0.0;
  }
  std::stable_sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return a.adapt_steps != b.adapt_steps ? a.adapt_steps < b.adapt_steps : a.task < b.task;
  });
  write_text(dir / "eval.csv", eval_csv(rows));
  meta["eval"] = evals;
  ordered_json hashes;
  for (const auto& f : files) hashes[f] = hash_file(dir / f);
  meta["files"] = hashes;
  write_text(dir / "job.json", meta.dump(2) + "\n");
}

JobOutcome execute_job(const ExperimentConfig& cfg, const JobSpec& job) {
  const fs::path dir = job_dir(cfg, job);
  JobOutcome out;
  if (fs::exists(dir / "job.json")) {
    const auto problem = verify_job(dir);
    if (problem.empty()) {
      out.skipped = true;
      return out;
    }
    out.code = kExitData;
    out.message = "completed job failed verification (" + problem + "); left untouched";
    return out;
  }
  const fs::path partial = dir.string() + ".partial";
  try {
    fs::remove_all(partial);
    if (fs::exists(dir)) fs::remove_all(dir);  // interrupted before completion
    fs::create_directories(partial);
    run_job(cfg, job, partial);
    fs::rename(partial, dir);
  } catch (const NumericalFailure& e) {
    out.code = kExitNumerical;
    out.message = e.what();
  } catch (const DegenerateConceptSpace& e) {
    out.code = kExitData;
    out.message = e.what();
  } catch (const DataError& e) {
    out.code = kExitData;
    out.message = e.what();
  } catch (const std::exception& e) {
    out.code = kExitFailure;
    out.message = e.what();
  }
  return out;
}

std::string describe(const ExperimentConfig& cfg, const JobSpec& job) {
  return cell_name(job.cell) + "/" + method_id(regime_config(cfg, job.regime)) + "/seed" + std::to_string(job.seed);
}

ordered_json inventory(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "manifest.json" &&
        e.path().parent_path().string().find(".partial") == std::string::npos)
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ordered_json inv = ordered_json::array();
  for (const auto& f : files)
    inv.push_back({{"path", fs::relative(f, root).generic_string()}, {"fnv1a64", hash_file(f)}});
  return inv;
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  fs::create_directories(cfg.out);
  const fs::path manifest_path = cfg.out / "manifest.json";
  const auto jobs = expand_jobs(cfg);
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  ordered_json manifest;
  if (fs::exists(manifest_path)) {
    try {
      manifest = ordered_json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
      throw DataError("unreadable manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("config", ordered_json()) != result_config(cfg))
      throw ConfigError("output directory " + cfg.out.string() +
                        " holds a run with a different configuration; choose another --out");
    log << "resuming run in " << cfg.out.string() << '\n';
  } else {
    manifest["artifact"] = "boolmeta";
    manifest["version"] = kArtifactVersion;
    manifest["config"] = result_config(cfg);
    ordered_json list = ordered_json::array();
    for (const auto& job : jobs) {
      const auto s = job_seeds(cfg, job.cell, job.seed);
      list.push_back({{"dir", fs::relative(job_dir(cfg, job), cfg.out).generic_string()},
                      {"method", method_id(regime_config(cfg, job.regime))},
                      {"F", job.cell.features},
                      {"D", job.cell.max_depth},
                      {"seed", job.seed},
                      {"effective_seed", s.effective},
                      {"train_seed", s.train},
                      {"eval_seed", s.eval},
                      {"init_seed", s.init}});
    }
    manifest["jobs"] = list;
    manifest["runs"] = ordered_json::array();
    manifest["inventory"] = ordered_json::array();
    write_text(manifest_path, manifest.dump(2) + "\n");
  }

  std::vector<JobOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      {
        std::lock_guard lock(log_mutex);
        log << "[" << (i + 1) << "/" << jobs.size() << "] " << describe(cfg, jobs[i]) << '\n' << std::flush;
      }
      const auto js = std::chrono::steady_clock::now();
      outcomes[i] = execute_job(cfg, jobs[i]);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - js).count();
      std::lock_guard lock(log_mutex);
      if (outcomes[i].skipped)
        log << "  skipped " << describe(cfg, jobs[i]) << " (complete, hashes verified)\n";
      else if (outcomes[i].code != kExitOk)
        log << "  FAILED " << describe(cfg, jobs[i]) << ": " << outcomes[i].message << '\n';
      else
        log << "  done " << describe(cfg, jobs[i]) << " in " << format_double(std::round(secs * 10) / 10) << "s\n";
      log << std::flush;
    }
  };
  const int n_threads = std::min<int>(cfg.workers, static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  int code = kExitOk;
  int completed = 0, skipped = 0, failed = 0;
  for (const auto& o : outcomes) {
    if (o.skipped)
      ++skipped;
    else if (o.code != kExitOk)
      ++failed;
    else
      ++completed;
    if (code == kExitOk && o.code != kExitOk) code = o.code;
  }
  manifest["runs"].push_back(
      {{"started_utc", started},
       {"finished_utc", utc_now()},
       {"wall_clock_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
       {"completed", completed},
       {"skipped", skipped},
       {"failed", failed}});
  manifest["inventory"] = inventory(cfg.out);
  write_text(manifest_path, manifest.dump(2) + "\n");
  log << completed << " completed, " << skipped << " skipped, " << failed << " failed\n";
  return code;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

ordered_json optional_samples(const std::optional<double>& v) {
  if (v) return *v;
  return kNotReached;
}

struct RegimeData {
  RegimeSpec spec;
  std::vector<RunTrace> traces;
  std::vector<std::vector<EvalRow>> evals;
};

}  // namespace

int cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path dir = cfg.out / "report";
  fs::create_directories(dir / "curves");
  int missing = 0, found = 0;
  ordered_json summaries = ordered_json::array();
  std::ostringstream final_csv, stt_csv, auc_csv, delta_csv, class_csv;
  final_csv << "method,F,D,K,order,seeds,eval_accuracy,eval_accuracy_stderr,final_trace_accuracy,"
               "final_trace_accuracy_stderr\n";
  stt_csv << "method,F,D,K,order,seed,threshold,samples\n";
  auc_csv << "method,F,D,K,order,seed,auc\n";
  delta_csv << "F,D,order,source,k1_accuracy,k10_accuracy,delta\n";
  class_csv << "method,F,D,K,order,class,tasks,mean_accuracy\n";

  for (const auto& cell : cfg.cells) {
    std::vector<RegimeData> data;
    for (const auto& spec : cfg.regimes) {
      RegimeData rd{spec, {}, {}};
      const auto rc = regime_config(cfg, spec);
      for (auto seed : cfg.seeds) {
        const fs::path jd = job_dir(cfg, {cell, spec, seed});
        if (!fs::exists(jd / "job.json")) {
          log << "missing trace: " << cell_name(cell) << " " << method_id(rc) << " seed " << seed << '\n';
          ++missing;
          continue;
        }
        rd.traces.push_back(read_trace_csv(jd / "trace.csv"));
        rd.evals.push_back(read_eval_csv(jd / "eval.csv"));
        ++found;
      }
      if (rd.traces.empty()) continue;
      const int own_k = spec.regime == Regime::Sgd ? rc.baseline_steps : spec.adapt_steps;
      const auto s = aggregate(rd.traces, cfg.threshold);
      const auto& c = s.cell;
      const std::string prefix = c.method + "," + std::to_string(c.features) + "," + std::to_string(c.max_depth) +
                                 "," + std::to_string(c.adapt_steps) + "," + c.order + ",";
      std::vector<double> eval_means;
      for (const auto& rows : rd.evals) eval_means.push_back(mean_at(rows, own_k));
      final_csv << prefix << s.seed_count << ',' << format_double(mean(eval_means)) << ','
                << format_double(standard_error(eval_means)) << ',' << format_double(s.final_accuracy) << ','
                << format_double(s.final_accuracy_stderr) << '\n';
      ordered_json per_seed = ordered_json::array();
      for (std::size_t i = 0; i < s.per_seed.size(); ++i) {
        const auto& ps = s.per_seed[i];
        stt_csv << prefix << ps.seed << ',' << format_double(cfg.threshold) << ','
                << (ps.samples_to_threshold ? std::to_string(*ps.samples_to_threshold) : kNotReached) << '\n';
        auc_csv << prefix << ps.seed << ',' << format_double(ps.auc) << '\n';
        ordered_json e;
        e["seed"] = ps.seed;
        e["final_accuracy"] = ps.final_accuracy;
        e["auc"] = ps.auc;
        e["samples_to_threshold"] = ps.samples_to_threshold ? ordered_json(*ps.samples_to_threshold)
                                                            : ordered_json(kNotReached);
        per_seed.push_back(e);
      }
      // Eval rows are keyed by seed order in rd, while per_seed is sorted; attach by seed.
      for (std::size_t i = 0; i < rd.traces.size(); ++i)
        for (auto& e : per_seed)
          if (e["seed"].get<std::uint64_t>() == rd.traces[i].seed) e["eval_accuracy"] = eval_means[i];

      std::map<std::string, std::vector<double>> by_class;
      for (const auto& rows : rd.evals)
        for (const auto& r : rows)
          if (r.adapt_steps == own_k) by_class[std::string(to_string(classify(r.literals)))].push_back(r.query_acc);
      for (const auto& [cls, accs] : by_class)
        class_csv << prefix << cls << ',' << accs.size() << ',' << format_double(mean(accs)) << '\n';

      std::ostringstream curve;
      curve << "episode,cum_samples,mean_accuracy,stderr_accuracy\n";
      for (std::size_t i = 0; i < s.episodes.size(); ++i)
        curve << s.episodes[i] << ',' << s.cum_samples[i] << ',' << format_double(s.mean_accuracy[i]) << ','
              << format_double(s.stderr_accuracy[i]) << '\n';
      write_text(dir / "curves" / (c.method + "_" + cell_name(cell) + ".csv"), curve.str());

      ordered_json j;
      j["method"] = c.method;
      j["F"] = c.features;
      j["D"] = c.max_depth;
      j["K"] = c.adapt_steps;
      j["order"] = c.order;
      j["seed_count"] = s.seed_count;
      j["threshold"] = s.threshold;
      j["final_accuracy"] = s.final_accuracy;
      j["final_accuracy_stderr"] = s.final_accuracy_stderr;
      j["eval_accuracy"] = mean(eval_means);
      j["eval_accuracy_stderr"] = standard_error(eval_means);
      j["mean_auc"] = s.mean_auc;
      j["mean_samples_to_threshold"] = optional_samples(s.mean_samples_to_threshold);
      j["not_reached_count"] = s.not_reached_count;
      j["per_seed"] = per_seed;
      j["curve"] = {{"episodes", s.episodes},
                    {"cum_samples", s.cum_samples},
                    {"mean_accuracy", s.mean_accuracy},
                    {"stderr_accuracy", s.stderr_accuracy}};
      summaries.push_back(j);
      data.push_back(std::move(rd));
    }

    // K=10 against K=1, per adaptation order.
    for (Regime order : {Regime::MetaSgdFirst, Regime::MetaSgdSecond}) {
      const RegimeData* k1 = nullptr;
      const RegimeData* k10 = nullptr;
      for (const auto& rd : data) {
        if (rd.spec.regime != order) continue;
        if (rd.spec.adapt_steps == 1) k1 = &rd;
        if (rd.spec.adapt_steps == 10) k10 = &rd;
      }
      if (!k1) continue;
      auto seed_mean = [](const RegimeData& rd, int k, bool& ok) {
        std::vector<double> v;
        for (const auto& rows : rd.evals) {
          int n = 0;
          const double m = mean_at(rows, k, &n);
          if (n == 0) ok = false;
          v.push_back(m);
        }
        return mean(v);
      };
      bool ok = true;
      double a1 = seed_mean(*k1, 1, ok), a10 = 0.0;
      std::string source;
      if (k10) {
        a10 = seed_mean(*k10, 10, ok);
        source = "trained";
      } else {
        a10 = seed_mean(*k1, 10, ok);
        source = "eval_steps";
      }
      if (!ok) continue;
      delta_csv << cell.features << ',' << cell.max_depth << ','
                << (order == Regime::MetaSgdFirst ? "first" : "second") << ',' << source << ','
                << format_double(a1) << ',' << format_double(a10) << ',' << format_double(a10 - a1) << '\n';
    }
  }

  if (found == 0) {
    log << "no traces found under " << cfg.out.string() << '\n';
    return kExitData;
  }
  write_text(dir / "summary.json", summaries.dump(2) + "\n");
  ordered_json flags;
  flags["baseline_steps"] = cfg.optim.baseline_steps;
  flags["baseline_budget_note"] = "per-task from-scratch Adam budget is a chosen default, not a measured one";
  flags["query_balance"] = std::to_string(cfg.optim.shape.query_per_class) + "/" +
                           std::to_string(cfg.optim.shape.query_per_class) + " balanced";
  flags["support_balance"] = std::to_string(cfg.optim.shape.support_per_class) + "/" +
                             std::to_string(cfg.optim.shape.support_per_class) + " balanced";
  flags["threshold"] = cfg.threshold;
  flags["threshold_smoothing_window"] = kThresholdWindow;
  flags["sgd_curve"] = "mean over held-out tasks of per-step baseline records";
  write_text(dir / "flags.json", flags.dump(2) + "\n");
  write_text(dir / "final_accuracy.csv", final_csv.str());
  write_text(dir / "samples_to_threshold.csv", stt_csv.str());
  write_text(dir / "auc.csv", auc_csv.str());
  write_text(dir / "k_delta.csv", delta_csv.str());
  write_text(dir / "class_accuracy.csv", class_csv.str());
  log << "report written to " << dir.string() << '\n';
  return missing == 0 ? kExitOk : kExitData;
}

// ---------------------------------------------------------------------------
// landscape
// ---------------------------------------------------------------------------

namespace {

struct Geometry {
  double support_loss = 0.0;
  TraceEstimate trace;
  SpectralEstimate spectral;
  MinimaStats minima;
};

Geometry analyse(const NetObjective& support, const Vector& theta, const LandscapeOptions& o, std::uint64_t seed) {
  Geometry g;
  g.support_loss = support.value(theta);
  const auto h = hessian_operator(support, theta);
  Rng probe_rng(derive_seed({seed, kProbeTag}));
  g.trace = hessian_trace(h, theta.size(), o.probes, probe_rng);
  Rng power_rng(derive_seed({seed, kProbeTag, 1}));
  g.spectral = spectral_extremes(h, theta.size(), o.power_iters, power_rng);
  g.minima = local_minima_statistics(support, theta, parameter_blocks(support.arch()), o.minima_slices,
                                     o.minima_radius, o.minima_resolution, derive_seed({seed, kSliceTag}));
  return g;
}

struct BaselineAnalysis {
  Geometry geometry;
  BaselineRun run;
  double roughness = 0.0;
  double length = 0.0;
};

struct Accumulator {
  std::vector<double> roughness, roughness_other, trace, trace_se, spectral, lmax, lmin, minima_mean, minima_sd, length,
      matched_loss, matched_samples;
  int nonconverged = 0;

  void add(const Geometry& g) {
    trace.push_back(g.trace.estimate);
    trace_se.push_back(g.trace.stderr_estimate);
    spectral.push_back(g.spectral.spectral_norm);
    lmax.push_back(g.spectral.lambda_max);
    lmin.push_back(g.spectral.lambda_min);
    minima_mean.push_back(g.minima.mean);
    minima_sd.push_back(g.minima.sd);
    if (!g.spectral.converged) ++nonconverged;
  }

  CurvatureReport report(const std::string& method, const CellSpec& cell, const LandscapeOptions& o) const {
    CurvatureReport r;
    r.method = method;
    r.features = cell.features;
    r.max_depth = cell.max_depth;
    r.tasks = static_cast<int>(trace.size());
    r.loss_source = o.loss_source;
    r.roughness = mean(roughness);
    r.roughness_stderr = standard_error(roughness);
    r.trace = mean(trace);
    r.trace_stderr = standard_error(trace);
    r.spectral_norm = mean(spectral);
    r.lambda_max = mean(lmax);
    r.lambda_min = mean(lmin);
    r.condition = condition_number(r.lambda_max, r.lambda_min);
    r.nonconverged = nonconverged;
    r.minima_mean = mean(minima_mean);
    r.minima_sd = mean(minima_sd);
    r.trajectory_length = mean(length);
    r.trajectory_length_matched_loss = mean(matched_loss);
    r.trajectory_length_matched_samples = mean(matched_samples);
    r.probes = o.probes;
    r.power_iters = o.power_iters;
    r.minima_slices = o.minima_slices;
    r.minima_radius = o.minima_radius;
    r.minima_resolution = o.minima_resolution;
    return r;
  }
};

std::vector<double> loss_column(std::span<const TraceRecord> records, const std::string& source) {
  std::vector<double> v;
  for (const auto& r : records) v.push_back(source == "support" ? r.support_loss : r.query_loss);
  return v;
}

std::string other_source(const std::string& source) { return source == "support" ? "query" : "support"; }

// Report record plus the roughness computed from the other loss source.
std::string report_line(const CurvatureReport& r, const std::vector<double>& other, const std::string& source) {
  auto j = ordered_json::parse(curvature_report_json(r));
  j["roughness_" + other_source(source)] = mean(other);
  return j.dump();
}

}  // namespace

int cmd_landscape(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto& o = cfg.landscape;
  const fs::path dir = cfg.out / "landscape";
  const RegimeSpec sgd_spec{Regime::Sgd, 0};
  const auto sgd_rc = regime_config(cfg, sgd_spec);
  std::ostringstream per_task;
  per_task << "method,F,D,seed,task,class,support_loss_meta,support_loss_sgd,trace_meta,trace_sgd,delta_trace,"
              "spectral_norm_meta,spectral_norm_sgd,length_meta,length_sgd,length_sgd_matched_loss,"
              "length_sgd_matched_samples,minima_meta,minima_sgd\n";
  std::vector<std::string> report_lines, delta_lines;
  int checkpoints = 0;

  for (const auto& cell : cfg.cells) {
    const auto arch = architecture(cfg, cell);
    Accumulator sgd_acc;
    std::vector<std::pair<std::string, Accumulator>> meta_accs;
    // Baseline analyses are shared by every meta regime of the same (cell, seed).
    std::map<std::pair<std::uint64_t, int>, BaselineAnalysis> baselines;

    for (const auto& spec : cfg.regimes) {
      if (spec.regime == Regime::Sgd) continue;
      const auto rc = regime_config(cfg, spec);
      Accumulator acc;
      for (auto seed : cfg.seeds) {
        const fs::path jd = job_dir(cfg, {cell, spec, seed});
        if (!fs::exists(jd / "job.json")) continue;
        ++checkpoints;
        const auto seeds = job_seeds(cfg, cell, seed);
        MetaState state;
        state.arch = arch;
        state.theta_init = read_checkpoint(jd / "theta_init.bin").flat();
        state.alpha = read_checkpoint(jd / "alpha.bin").flat();
        const auto trace = read_trace_csv(jd / "trace.csv");
        if (trace.records.size() >= 3) {
          for (double r : windowed_roughness(loss_column(trace.records, o.loss_source), o.roughness_window))
            acc.roughness.push_back(r);
          for (double r :
               windowed_roughness(loss_column(trace.records, other_source(o.loss_source)), o.roughness_window))
            acc.roughness_other.push_back(r);
        }
        const auto tasks = eval_episodes(cfg, cell, seed, o.tasks);
        for (int i = 0; i < static_cast<int>(tasks.size()); ++i) {
          const NetObjective support(arch, to_batch(tasks[i].support));
          const std::uint64_t geo_seed = derive_seed({seeds.init, static_cast<std::uint64_t>(i)});
          auto it = baselines.find({seed, i});
          if (it == baselines.end()) {
            BaselineAnalysis b;
            b.run = eval_baseline(sgd_rc, tasks[i], arch, baseline_seed(seeds, i), true);
            b.geometry = analyse(support, b.run.final_params.flat(), o, geo_seed);
            b.roughness = roughness(loss_column(b.run.trace.records, o.loss_source));
            sgd_acc.add(b.geometry);
            sgd_acc.roughness.push_back(b.roughness);
            sgd_acc.roughness_other.push_back(
                roughness(loss_column(b.run.trace.records, other_source(o.loss_source))));
            b.length = b.run.trajectory.size() >= 2 ? trajectory_length(b.run.trajectory) : 0.0;
            sgd_acc.length.push_back(b.length);
            it = baselines.emplace(std::make_pair(seed, i), std::move(b)).first;
          }
          const auto& base = it->second;
          const auto adapted = adapt(support, state.theta_init, state.alpha, spec.adapt_steps);
          const auto g = analyse(support, adapted.thetas.back(), o, geo_seed);
          acc.add(g);
          const double len = adapted.thetas.size() >= 2 ? trajectory_length(adapted.thetas) : 0.0;
          const double m_loss = matched_loss_length(base.run.trajectory, base.run.trace.records,
                                                    adapted.support_losses.back());
          const std::size_t k_end = std::min<std::size_t>(static_cast<std::size_t>(spec.adapt_steps) + 1,
                                                          base.run.trajectory.size());
          const double m_samples =
              k_end >= 2 ? trajectory_length(std::span<const Vector>(base.run.trajectory).subspan(0, k_end)) : 0.0;
          acc.length.push_back(len);
          acc.matched_loss.push_back(len);
          acc.matched_samples.push_back(len);
          sgd_acc.matched_loss.push_back(m_loss);
          sgd_acc.matched_samples.push_back(m_samples);
          const auto delta = relative_delta(g.trace.estimate, base.geometry.trace.estimate);
          per_task << method_id(rc) << ',' << cell.features << ',' << cell.max_depth << ',' << seed << ',' << i
                   << ',' << to_string(concept_stats(tasks[i].target).complexity) << ','
                   << format_double(g.support_loss) << ',' << format_double(base.geometry.support_loss) << ','
                   << format_double(g.trace.estimate) << ',' << format_double(base.geometry.trace.estimate) << ','
                   << (delta ? format_double(*delta) : std::string("Undefined")) << ','
                   << format_double(g.spectral.spectral_norm) << ','
                   << format_double(base.geometry.spectral.spectral_norm) << ',' << format_double(len) << ','
                   << format_double(base.length) << ','
                   << format_double(m_loss) << ',' << format_double(m_samples) << ','
                   << format_double(g.minima.mean) << ',' << format_double(base.geometry.minima.mean) << '\n';
          if (!g.spectral.converged)
            log << "warning: NonConverged spectral estimate for " << method_id(rc) << " " << cell_name(cell)
                << " seed " << seed << " task " << i << " (last delta " << format_double(g.spectral.last_delta)
                << ")\n";
          if (i == 0) {
            fs::create_directories(dir / "slices");
            const auto slice_seed = derive_seed({seeds.init, kSliceTag});
            const std::string stem = cell_name(cell) + "_seed" + std::to_string(seed) + "_task0.csv";
            write_slice_grid(dir / "slices" / (method_id(rc) + "_" + stem),
                             slice(support, adapted.thetas.back(), parameter_blocks(arch), 2, o.slice_radius,
                                   o.slice_resolution, slice_seed));
            write_slice_grid(dir / "slices" / ("sgd_" + stem),
                             slice(support, base.run.final_params.flat(), parameter_blocks(arch), 2, o.slice_radius,
                                   o.slice_resolution, slice_seed));
          }
        }
      }
      if (!acc.trace.empty()) meta_accs.emplace_back(method_id(rc), std::move(acc));
    }
    if (meta_accs.empty()) continue;
    const auto sgd_report = sgd_acc.report(method_id(sgd_rc), cell, o);
    report_lines.push_back(report_line(sgd_report, sgd_acc.roughness_other, o.loss_source));
    for (const auto& [method, acc] : meta_accs) {
      const auto meta_report = acc.report(method, cell, o);
      report_lines.push_back(report_line(meta_report, acc.roughness_other, o.loss_source));
      auto d = ordered_json::parse(curvature_delta_json(meta_report, sgd_report, curvature_delta(meta_report, sgd_report)));
      d["pairs"] = acc.trace.size();
      d["trajectory_length_meta"] = meta_report.trajectory_length;
      d["trajectory_length_baseline"] = sgd_report.trajectory_length;
      delta_lines.push_back(d.dump());
    }
  }

  if (checkpoints == 0) {
    log << "warning: no checkpoints found under " << cfg.out.string() << "; nothing to analyse\n";
    return kExitOk;
  }
  fs::create_directories(dir);
  std::string reports, deltas;
  for (const auto& l : report_lines) reports += l + "\n";
  for (const auto& l : delta_lines) deltas += l + "\n";
  write_text(dir / "curvature_reports.jsonl", reports);
  write_text(dir / "curvature_deltas.jsonl", deltas);
  write_text(dir / "per_task.csv", per_task.str());
  log << "landscape written to " << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

int cmd_validate(const ExperimentConfig& cfg, std::ostream& log) {
  if (!fs::exists(cfg.out)) throw DataError("nothing to validate: " + cfg.out.string() + " does not exist");
  int problems = 0, checked = 0;
  auto problem = [&](const std::string& msg) {
    ++problems;
    log << "problem: " << msg << '\n';
  };
  const fs::path manifest_path = cfg.out / "manifest.json";
  if (fs::exists(manifest_path)) {
    ++checked;
    try {
      const auto m = json::parse(read_text(manifest_path));
      for (const auto& e : m.value("inventory", json::array())) {
        const fs::path f = cfg.out / e.at("path").get<std::string>();
        if (!fs::exists(f))
          problem("manifest lists missing file " + f.string());
        else if (hash_file(f) != e.at("fnv1a64").get<std::string>())
          problem("hash mismatch for " + f.string());
      }
    } catch (const json::exception& e) {
      problem("unreadable manifest: " + std::string(e.what()));
    }
  }
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(cfg.out))
    if (e.is_regular_file()) paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    if (p.filename() == "job.json") {
      ++checked;
      if (const auto msg = verify_job(p.parent_path()); !msg.empty()) problem(p.parent_path().string() + ": " + msg);
      try {
        if (const auto bad = check_trace(read_trace_csv(p.parent_path() / "trace.csv")))
          problem(p.parent_path().string() + "/trace.csv: " + *bad);
      } catch (const std::exception& e) {
        problem(e.what());
      }
    } else if (p.extension() == ".jsonl" && p.parent_path().string().find("corpus") != std::string::npos) {
      ++checked;
      std::istringstream in(read_text(p));
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
          for (const auto& msg : validate_episode(parse_episode(line), cfg.optim.shape))
            problem(p.string() + ":" + std::to_string(lineno) + ": " + msg);
        } catch (const std::exception& e) {
          problem(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
      }
    }
  }
  log << checked << " artifacts checked, " << problems << " problems\n";
  return problems == 0 ? kExitOk : kExitData;
}

}  // namespace boolmeta
