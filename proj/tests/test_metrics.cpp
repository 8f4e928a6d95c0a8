#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "boolmeta/metrics.hpp"
#include "boolmeta/rng.hpp"

using namespace boolmeta;

namespace {

RunTrace make_trace(const std::vector<double>& accs, std::int64_t samples_per_record, std::uint64_t seed = 0) {
  RunTrace t;
  t.cell = {"metasgd1_k1", 8, 3, 1, "first"};
  t.seed = seed;
  for (std::size_t i = 0; i < accs.size(); ++i) {
    const auto ep = static_cast<std::int64_t>(i + 1);
    t.records.push_back({ep, ep * samples_per_record, 0.7, 0.6, accs[i]});
  }
  return t;
}

// Direct scan: recompute the trailing mean from scratch at every record.
std::optional<std::int64_t> scan_oracle(const RunTrace& t, double thr, int window) {
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - window : 0;
    double s = 0.0;
    for (std::size_t j = lo; j <= i; ++j) s += t.records[j].query_acc;
    if (s / static_cast<double>(i + 1 - lo) >= thr) return t.records[i].cum_samples;
  }
  return std::nullopt;
}

std::vector<double> random_accs(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& a : v) a = rng.uniform();
  return v;
}

}  // namespace

TEST(SamplesToThreshold, ConstantHighTraceReachesAtFirstRecord) {
  EXPECT_EQ(samples_to_threshold(make_trace(std::vector<double>(20, 0.9), 10), 0.6), 10);
}

TEST(SamplesToThreshold, ChanceTraceNeverReaches) {
  EXPECT_FALSE(samples_to_threshold(make_trace(std::vector<double>(50, 0.5), 10), 0.6).has_value());
}

TEST(SamplesToThreshold, MonotoneStepMatchesScanOracle) {
  // Ones from record 35 on; the width-5 mean first reaches 3/5 at record 37.
  std::vector<double> step(80, 0.0);
  for (int i = 34; i < 80; ++i) step[i] = 1.0;
  const auto t = make_trace(step, 30);
  EXPECT_EQ(samples_to_threshold(t, 0.6), 1110);
  EXPECT_EQ(samples_to_threshold(t, 0.6), scan_oracle(t, 0.6, 5));
  std::vector<double> ramp;
  for (int i = 0; i < 80; ++i) ramp.push_back(i / 79.0);
  const auto r = make_trace(ramp, 30);
  EXPECT_EQ(samples_to_threshold(r, 0.6), scan_oracle(r, 0.6, 5));
}

TEST(SamplesToThreshold, RandomTracesMatchScanOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = make_trace(random_accs(60, rng), 16);
    for (double thr : {0.3, 0.5, 0.6, 0.8})
      for (int w : {1, 3, 5}) ASSERT_EQ(samples_to_threshold(t, thr, w), scan_oracle(t, thr, w));
  }
}

TEST(SamplesToThreshold, NondecreasingInThreshold) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = make_trace(random_accs(40, rng), 7);
    std::int64_t prev = 0;
    for (double thr = 0.05; thr < 1.0; thr += 0.05) {
      const auto s = samples_to_threshold(t, thr);
      if (!s) {
        prev = std::numeric_limits<std::int64_t>::max();
        continue;
      }
      ASSERT_GE(*s, prev);
      prev = *s;
    }
  }
}

TEST(SamplesToThreshold, RejectsBadThreshold) {
  const auto t = make_trace({0.5, 0.5}, 1);
  EXPECT_THROW(samples_to_threshold(t, 0.0), std::invalid_argument);
  EXPECT_THROW(samples_to_threshold(t, 1.0), std::invalid_argument);
}

TEST(Auc, ConstantAndRamp) {
  EXPECT_DOUBLE_EQ(auc(make_trace(std::vector<double>(17, 0.73), 1)), 0.73);
  std::vector<double> ramp;
  for (int i = 0; i <= 100; ++i) ramp.push_back(i / 100.0);
  EXPECT_NEAR(auc(make_trace(ramp, 1)), 0.5, 1e-15);
  EXPECT_THROW(auc(make_trace({0.5}, 1)), std::invalid_argument);
}

TEST(Auc, MatchesFineRiemannSum) {
  Rng rng(3);
  const auto t = make_trace(random_accs(200, rng), 1);
  // Midpoint Riemann sum of the piecewise-linear interpolant, exact per segment.
  const int sub = 1000;
  double area = 0.0;
  const double seg = 1.0 / 199.0;
  for (std::size_t i = 0; i + 1 < t.records.size(); ++i)
    for (int k = 0; k < sub; ++k) {
      const double u = (k + 0.5) / sub;
      area += seg / sub * ((1 - u) * t.records[i].query_acc + u * t.records[i + 1].query_acc);
    }
  const double a = auc(t);
  EXPECT_NEAR(a, area, 1e-9);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
}

TEST(Aggregate, SingleSeedEqualsTrace) {
  Rng rng(4);
  const auto t = make_trace(random_accs(30, rng), 10, 7);
  const auto s = aggregate({t});
  EXPECT_EQ(s.seed_count, 1);
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    EXPECT_EQ(s.mean_accuracy[i], t.records[i].query_acc);
    EXPECT_EQ(s.stderr_accuracy[i], 0.0);
  }
  EXPECT_EQ(s.final_accuracy, t.records.back().query_acc);
  EXPECT_EQ(s.mean_auc, auc(t));
}

TEST(Aggregate, IdenticalSeedsHaveZeroError) {
  Rng rng(5);
  const auto accs = random_accs(25, rng);
  std::vector<RunTrace> ts;
  for (std::uint64_t s = 0; s < 5; ++s) ts.push_back(make_trace(accs, 10, s));
  const auto s = aggregate(ts);
  for (double e : s.stderr_accuracy) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(s.final_accuracy_stderr, 0.0);
}

TEST(Aggregate, MeanAucEqualsAucOfMeanTrace) {
  Rng rng(6);
  std::vector<RunTrace> ts;
  for (std::uint64_t s = 0; s < 4; ++s) ts.push_back(make_trace(random_accs(50, rng), 10, s));
  const auto s = aggregate(ts);
  EXPECT_NEAR(s.mean_auc, auc(make_trace(s.mean_accuracy, 10)), 1e-12);
}

TEST(Aggregate, PermutationInvariantAndNotReachedKeptApart) {
  Rng rng(7);
  std::vector<RunTrace> ts;
  ts.push_back(make_trace(std::vector<double>(20, 0.5), 10, 3));
  ts.push_back(make_trace(std::vector<double>(20, 0.9), 10, 1));
  ts.push_back(make_trace(random_accs(20, rng), 10, 2));
  auto shuffled = ts;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto a = aggregate(ts), b = aggregate(shuffled);
  EXPECT_EQ(a.mean_accuracy, b.mean_accuracy);
  EXPECT_EQ(a.mean_auc, b.mean_auc);
  ASSERT_EQ(a.per_seed.size(), 3u);
  EXPECT_EQ(a.per_seed[0].seed, 1u);
  EXPECT_FALSE(a.per_seed[2].samples_to_threshold.has_value());
  EXPECT_GE(a.not_reached_count, 1);
  ASSERT_TRUE(a.mean_samples_to_threshold.has_value());
}

TEST(Aggregate, RejectsMismatchedCellsAndGrids) {
  auto a = make_trace({0.5, 0.6}, 1, 0);
  auto b = make_trace({0.5, 0.6}, 1, 1);
  b.cell.max_depth = 5;
  EXPECT_THROW(aggregate({a, b}), std::invalid_argument);
  b = make_trace({0.5, 0.6, 0.7}, 1, 1);
  EXPECT_THROW(aggregate({a, b}), std::invalid_argument);
  b = make_trace({0.5, 0.6}, 1, 1);
  b.records[1].episode = 5;
  EXPECT_THROW(aggregate({a, b}), std::invalid_argument);
  EXPECT_THROW(aggregate({}), std::invalid_argument);
}

TEST(StandardError, SampleDeviationOverRootN) {
  EXPECT_EQ(standard_error({}), 0.0);
  EXPECT_EQ(standard_error({3.0}), 0.0);
  EXPECT_NEAR(standard_error({1.0, 2.0, 3.0, 4.0}), std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
}

TEST(CheckTrace, FlagsBrokenInvariants) {
  auto t = make_trace({0.1, 0.2, 0.3}, 5);
  EXPECT_FALSE(check_trace(t).has_value());
  t.records[2].episode = 2;
  EXPECT_TRUE(check_trace(t).has_value());
  t = make_trace({0.1, 1.2}, 5);
  EXPECT_TRUE(check_trace(t).has_value());
  t = make_trace({0.1, 0.2}, 5);
  t.records[1].cum_samples = 1;
  EXPECT_TRUE(check_trace(t).has_value());
}

TEST(TraceCsv, RoundTripsExactly) {
  const auto path = std::filesystem::temp_directory_path() / "boolmeta_trace_test.csv";
  Rng rng(8);
  auto t = make_trace(random_accs(40, rng), 480, 12);
  t.records[3].query_loss = 1.0 / 3.0;
  t.records[4].support_loss = 1e-300;
  write_trace_csv(path, t);
  const auto back = read_trace_csv(path);
  EXPECT_EQ(back.cell, t.cell);
  EXPECT_EQ(back.seed, t.seed);
  EXPECT_EQ(back.records, t.records);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "method,F,D,K,order,seed,episode,cum_samples,support_loss,query_loss,query_acc");
  std::filesystem::remove(path);
}

TEST(TraceCsv, RejectsMalformedFiles) {
  const auto path = std::filesystem::temp_directory_path() / "boolmeta_trace_bad.csv";
  std::ofstream(path) << "nope\n";
  EXPECT_THROW(read_trace_csv(path), std::runtime_error);
  std::ofstream(path) << "method,F,D,K,order,seed,episode,cum_samples,support_loss,query_loss,query_acc\n"
                      << "sgd,8,3,0,none,1,1,10,0.5,0.5,abc\n";
  EXPECT_THROW(read_trace_csv(path), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(read_trace_csv(path), std::runtime_error);
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}
