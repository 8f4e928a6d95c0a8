#include <gtest/gtest.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "boolmeta/experiment.hpp"
#include "boolmeta/metrics.hpp"
#include "json.hpp"

namespace bm = boolmeta;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("boolmeta_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

bm::ExperimentConfig tiny(const fs::path& out) {
  auto c = bm::profile_config("desk");
  c.cells = {{8, 3}};
  c.regimes = {{bm::Regime::Sgd, 0}, {bm::Regime::MetaSgdFirst, 1}};
  c.seeds = {0};
  c.optim.meta_episodes = 10;
  c.optim.meta_batch = 2;
  c.optim.baseline_steps = 5;
  c.optim.snapshot_stride = 5;
  c.eval_tasks = 4;
  c.eval_adapt_steps = {1, 3};
  c.generate_train_batches = 2;
  c.hidden_width = 16;
  c.hidden_layers = 2;
  c.landscape.tasks = 2;
  c.landscape.probes = 5;
  c.landscape.power_iters = 10;
  c.landscape.minima_slices = 3;
  c.landscape.minima_resolution = 11;
  c.landscape.slice_resolution = 5;
  c.landscape.roughness_window = 5;
  c.out = out;
  return c;
}

}  // namespace

TEST(Config, ProfilesHaveExpectedGrid) {
  const auto desk = bm::profile_config("desk");
  EXPECT_EQ(desk.cells.size(), 2u);
  EXPECT_EQ(desk.seeds.size(), 2u);
  const auto paper = bm::profile_config("paper");
  EXPECT_EQ(paper.cells.size(), 9u);
  EXPECT_EQ(paper.regimes.size(), 5u);
  EXPECT_EQ(paper.seeds.size(), 5u);
  EXPECT_EQ(paper.optim.meta_episodes, 10000);
  EXPECT_EQ(paper.eval_tasks, 1000);
  EXPECT_THROW(bm::profile_config("huge"), bm::ConfigError);
}

TEST(Config, RoundTripsThroughJson) {
  auto c = tiny("somewhere");
  c.probs = {0.4, 0.1, 0.25, 0.25};
  c.landscape.loss_source = "support";
  const auto text = bm::config_to_json(c);
  const auto back = bm::parse_config(text);
  EXPECT_EQ(bm::config_to_json(back), text);
}

TEST(Config, RejectsUnknownKeys) {
  EXPECT_THROW(bm::parse_config(R"({"meta_epsiodes": 5})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"grammar": {"p_xor": 0.1}})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"cells": [{"F": 8, "D": 3, "W": 1}]})"), bm::ConfigError);
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(bm::parse_config("not json"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"meta_episodes": 1.5})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"meta_episodes": -1})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"seeds": [-1]})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"seeds": [1, 1]})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"regimes": [{"regime": "adam"}]})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"grammar": {"p_literal": 0.9}})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"cells": [{"F": 0, "D": 3}]})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"threshold": 1.0})"), bm::ConfigError);
  EXPECT_THROW(bm::parse_config(R"({"landscape": {"loss_source": "train"}})"), bm::ConfigError);
}

TEST(Config, ProfileOverrideWinsOverFile) {
  const auto c = bm::parse_config(R"({"profile": "desk", "eval_tasks": 7})", std::string("paper"));
  EXPECT_EQ(c.profile, "paper");
  EXPECT_EQ(c.cells.size(), 9u);
  EXPECT_EQ(c.eval_tasks, 7);
}

TEST(Jobs, SeedsDependOnCellAndOffsetSeed) {
  auto c = tiny("x");
  const bm::CellSpec a{8, 3}, b{16, 5};
  const auto s0 = bm::job_seeds(c, a, 0);
  EXPECT_NE(s0.train, bm::job_seeds(c, b, 0).train);
  EXPECT_NE(s0.train, bm::job_seeds(c, a, 1).train);
  EXPECT_NE(s0.train, s0.eval);
  EXPECT_NE(s0.eval, s0.init);
  c.seed_offset = 3;
  const auto shifted = bm::job_seeds(c, a, 0);
  c.seed_offset = 0;
  const auto plain = bm::job_seeds(c, a, 3);
  EXPECT_EQ(shifted.train, plain.train);
  EXPECT_EQ(shifted.init, plain.init);
  EXPECT_EQ(shifted.effective, 3u);
}

TEST(Jobs, ExpandCoversGridAndPathsAreDistinct) {
  auto c = bm::profile_config("paper");
  const auto jobs = bm::expand_jobs(c);
  EXPECT_EQ(jobs.size(), 9u * 5u * 5u);
  std::set<fs::path> dirs;
  for (const auto& j : jobs) dirs.insert(bm::job_dir(c, j));
  EXPECT_EQ(dirs.size(), jobs.size());
}

TEST(Jobs, EvalEpisodesAreSharedAndDeterministic) {
  const auto c = tiny("x");
  const auto a = bm::eval_episodes(c, {8, 3}, 0, 5);
  const auto b = bm::eval_episodes(c, {8, 3}, 0, 5);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, bm::eval_episodes(c, {8, 3}, 1, 5));
  // A prefix of a longer request is the shorter request.
  const auto longer = bm::eval_episodes(c, {8, 3}, 0, 8);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), longer.begin()));
}

TEST(Jobs, MatchedLossLengthStopsAtFirstRecordBelowTarget) {
  std::vector<bm::Vector> path;
  std::vector<bm::TraceRecord> records;
  for (int i = 0; i < 5; ++i) {
    path.push_back(bm::Vector::Constant(1, i));
    bm::TraceRecord r;
    r.support_loss = 1.0 - 0.2 * i;
    records.push_back(r);
  }
  EXPECT_DOUBLE_EQ(bm::matched_loss_length(path, records, 0.55), 3.0);  // losses 1, .8, .6, .4
  EXPECT_DOUBLE_EQ(bm::matched_loss_length(path, records, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(bm::matched_loss_length(path, records, -1.0), 4.0);
}

TEST(Generate, WritesRequestedCountsByteIdentically) {
  TempDir d1("gen1"), d2("gen2");
  auto c = tiny(d1.path());
  c.eval_tasks = 10;
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_generate(c, log), bm::kExitOk);
  const fs::path rel = fs::path("corpus") / "F8_D3" / "seed0";
  EXPECT_EQ(count_lines(d1.path() / rel / "eval.jsonl"), 10);
  EXPECT_EQ(count_lines(d1.path() / rel / "train.jsonl"), c.generate_train_batches * c.optim.meta_batch);
  c.out = d2.path();
  ASSERT_EQ(bm::cmd_generate(c, log), bm::kExitOk);
  for (const char* f : {"eval.jsonl", "train.jsonl", "stream.json"})
    EXPECT_EQ(slurp(d1.path() / rel / f), slurp(d2.path() / rel / f)) << f;
  // Regenerating identical content is a no-op; anything else is refused.
  ASSERT_EQ(bm::cmd_generate(c, log), bm::kExitOk);
  c.eval_tasks = 11;
  EXPECT_THROW(bm::cmd_generate(c, log), bm::DataError);
  c.eval_tasks = 10;
  EXPECT_EQ(bm::cmd_validate(c, log), bm::kExitOk);
}

TEST(Generate, EveryLineParsesAndValidates) {
  TempDir d("genparse");
  const auto c = tiny(d.path());
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_generate(c, log), bm::kExitOk);
  std::ifstream in(d.path() / "corpus" / "F8_D3" / "seed0" / "eval.jsonl");
  std::string line;
  const auto expected = bm::eval_episodes(c, {8, 3}, 0, c.eval_tasks);
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    const auto e = bm::parse_episode(line);
    EXPECT_TRUE(bm::validate_episode(e, c.optim.shape).empty());
    EXPECT_EQ(e, expected.at(i));
  }
}

TEST(Train, OneJobTenEpisodesGivesTenTraceRows) {
  TempDir d("train1");
  auto c = tiny(d.path());
  c.regimes = {{bm::Regime::MetaSgdFirst, 1}};
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  const auto dir = bm::job_dir(c, {c.cells[0], c.regimes[0], 0});
  const auto trace = bm::read_trace_csv(dir / "trace.csv");
  EXPECT_EQ(trace.records.size(), 10u);
  EXPECT_FALSE(bm::check_trace(trace));
  EXPECT_EQ(trace.seed, 0u);
  for (const char* f : {"job.json", "eval.csv", "theta_init.bin", "alpha.bin", "snapshots.bin"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  // Eval rows for K in {1, 3} over 4 tasks.
  EXPECT_EQ(count_lines(dir / "eval.csv"), 1 + 2 * 4);
  EXPECT_TRUE(fs::exists(d.path() / "manifest.json"));
}

TEST(Train, ResumeSkipsCompletedJobs) {
  TempDir d("resume");
  auto c = tiny(d.path());
  std::ostringstream first;
  ASSERT_EQ(bm::cmd_train(c, first), bm::kExitOk);
  const auto dir = bm::job_dir(c, {c.cells[0], c.regimes[1], 0});
  const auto before = slurp(dir / "theta_init.bin");
  std::ostringstream second;
  ASSERT_EQ(bm::cmd_train(c, second), bm::kExitOk);
  EXPECT_NE(second.str().find("0 completed, 2 skipped, 0 failed"), std::string::npos) << second.str();
  EXPECT_EQ(slurp(dir / "theta_init.bin"), before);
  const auto manifest = nlohmann::json::parse(slurp(d.path() / "manifest.json"));
  EXPECT_EQ(manifest["runs"].size(), 2u);
  EXPECT_EQ(manifest["jobs"].size(), 2u);
}

TEST(Train, ChangedConfigIsRejectedOnResume) {
  TempDir d("extend");
  auto c = tiny(d.path());
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  c.seeds = {0, 1};
  EXPECT_THROW(bm::cmd_train(c, log), bm::ConfigError);
}

TEST(Train, WorkersDoNotChangeResults) {
  TempDir d1("w1"), d2("w2");
  auto c = tiny(d1.path());
  c.seeds = {0, 1};
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  c.out = d2.path();
  c.workers = 3;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  for (const auto& job : bm::expand_jobs(c)) {
    auto c1 = c;
    c1.out = d1.path();
    const auto a = bm::job_dir(c1, job), b = bm::job_dir(c, job);
    for (const auto& e : fs::directory_iterator(a))
      EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
}

TEST(Train, TamperedResultFailsValidationAndIsNotOverwritten) {
  TempDir d("tamper");
  auto c = tiny(d.path());
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  EXPECT_EQ(bm::cmd_validate(c, log), bm::kExitOk);
  const auto eval = bm::job_dir(c, {c.cells[0], c.regimes[0], 0}) / "eval.csv";
  std::ofstream(eval, std::ios::app) << "9,1,simple,5,1\n";
  const auto tampered = slurp(eval);
  std::ostringstream vlog;
  EXPECT_EQ(bm::cmd_validate(c, vlog), bm::kExitData);
  EXPECT_NE(vlog.str().find("hash mismatch"), std::string::npos);
  EXPECT_EQ(bm::cmd_train(c, log), bm::kExitData);
  EXPECT_EQ(slurp(eval), tampered);
}

TEST(Validate, MissingDirectoryIsDataError) {
  auto c = tiny("/nonexistent/boolmeta_nowhere");
  std::ostringstream log;
  EXPECT_THROW(bm::cmd_validate(c, log), bm::DataError);
}

TEST(Report, NotReachedSentinelAndAucRecomputation) {
  TempDir d("report");
  auto c = tiny(d.path());
  c.threshold = 0.99;
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  ASSERT_EQ(bm::cmd_report(c, log), bm::kExitOk);
  const auto stt = slurp(d.path() / "report" / "samples_to_threshold.csv");
  EXPECT_NE(stt.find(std::string(",") + bm::kNotReached), std::string::npos) << stt;

  const auto meta_trace = bm::read_trace_csv(bm::job_dir(c, {c.cells[0], c.regimes[1], 0}) / "trace.csv");
  std::ifstream in(d.path() / "report" / "auc.csv");
  std::string line;
  bool found = false;
  while (std::getline(in, line))
    if (line.rfind("metasgd1_k1,", 0) == 0) {
      const double reported = std::stod(line.substr(line.rfind(',') + 1));
      EXPECT_NEAR(reported, bm::auc(meta_trace), 1e-12);
      found = true;
    }
  EXPECT_TRUE(found);
  const auto summary = nlohmann::json::parse(slurp(d.path() / "report" / "summary.json"));
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[1]["mean_samples_to_threshold"], bm::kNotReached);
  EXPECT_TRUE(fs::exists(d.path() / "report" / "curves" / "metasgd1_k1_F8_D3.csv"));
  const auto flags = nlohmann::json::parse(slurp(d.path() / "report" / "flags.json"));
  EXPECT_EQ(flags["baseline_steps"], c.optim.baseline_steps);
  EXPECT_EQ(flags["query_balance"], "10/10 balanced");
  // Eval-step delta is available even without a trained K=10 regime.
  EXPECT_EQ(count_lines(d.path() / "report" / "k_delta.csv"), 1);
}

TEST(Report, MissingTracesAreDataError) {
  TempDir d("missing");
  auto c = tiny(d.path());
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  c.seeds = {0, 1};
  std::ostringstream rlog;
  EXPECT_EQ(bm::cmd_report(c, rlog), bm::kExitData);
  EXPECT_NE(rlog.str().find("missing trace: F8_D3 sgd seed 1"), std::string::npos) << rlog.str();
  EXPECT_TRUE(fs::exists(d.path() / "report" / "summary.json"));
}

TEST(Report, KDeltaUsesEvalStepsOfTheK1Regime) {
  TempDir d("kdelta");
  auto c = tiny(d.path());
  c.eval_adapt_steps = {1, 10};
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  ASSERT_EQ(bm::cmd_report(c, log), bm::kExitOk);
  const auto job = nlohmann::json::parse(slurp(bm::job_dir(c, {c.cells[0], c.regimes[1], 0}) / "job.json"));
  const double k1 = job["eval"][0]["mean"], k10 = job["eval"][1]["mean"];
  std::ifstream in(d.path() / "report" / "k_delta.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(row, "8,3,first,eval_steps," + bm::format_double(k1) + "," + bm::format_double(k10) + "," +
                     bm::format_double(k10 - k1));
}

TEST(Landscape, NoCheckpointsWarnsAndSucceeds) {
  TempDir d("noland");
  auto c = tiny(d.path());
  std::ostringstream log;
  EXPECT_EQ(bm::cmd_landscape(c, log), bm::kExitOk);
  EXPECT_NE(log.str().find("no checkpoints"), std::string::npos);
  EXPECT_FALSE(fs::exists(d.path() / "landscape"));
}

TEST(Landscape, SmokeCellWritesReports) {
  TempDir d("land");
  auto c = tiny(d.path());
  std::ostringstream log;
  ASSERT_EQ(bm::cmd_train(c, log), bm::kExitOk);
  ASSERT_EQ(bm::cmd_landscape(c, log), bm::kExitOk);
  const fs::path dir = d.path() / "landscape";
  EXPECT_EQ(count_lines(dir / "curvature_reports.jsonl"), 2);
  EXPECT_EQ(count_lines(dir / "curvature_deltas.jsonl"), 1);
  EXPECT_EQ(count_lines(dir / "per_task.csv"), 1 + c.landscape.tasks);
  std::ifstream in(dir / "curvature_reports.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["tasks"], c.landscape.tasks);
    EXPECT_TRUE(std::isfinite(j["hessian_trace"].get<double>()));
    EXPECT_EQ(j["loss_source"], "query");
    EXPECT_TRUE(j.contains("roughness_support"));
  }
  EXPECT_TRUE(fs::exists(dir / "slices" / "sgd_F8_D3_seed0_task0.csv"));
  EXPECT_TRUE(fs::exists(dir / "slices" / "metasgd1_k1_F8_D3_seed0_task0.csv"));
  // Deterministic on rerun.
  const auto first = slurp(dir / "per_task.csv");
  ASSERT_EQ(bm::cmd_landscape(c, log), bm::kExitOk);
  EXPECT_EQ(slurp(dir / "per_task.csv"), first);
}
