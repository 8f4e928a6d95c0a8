#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "boolmeta/landscape.hpp"
#include "boolmeta/net.hpp"
#include "test_support.hpp"

using namespace boolmeta;
using namespace boolmeta::testing;

namespace {

std::vector<double> noisy_sequence(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(-0.01 * static_cast<double>(i)) + 0.1 * rng.normal();
  return v;
}

LinearOperator diagonal(const Vector& d) {
  return [d](const Vector& v) { return Vector(d.cwiseProduct(v)); };
}

struct TinyNet {
  Architecture arch = tiny_arch();
  Vector theta;
  std::unique_ptr<NetObjective> f;
};

TinyNet tiny_net(std::uint64_t seed) {
  TinyNet t;
  Rng rng(seed);
  t.theta = random_vector(t.arch.param_count(), rng, 0.8);
  t.f = std::make_unique<NetObjective>(t.arch, random_batch(2, 10, rng));
  return t;
}

}  // namespace

TEST(Roughness, ConstantAndAffineAreZero) {
  EXPECT_EQ(roughness(std::vector<double>(50, 3.2)), 0.0);
  std::vector<double> line;
  for (int i = 0; i < 200; ++i) line.push_back(2.5 - 0.03 * i);
  EXPECT_LT(roughness(line), 1e-6);
  EXPECT_LT(roughness(std::vector<double>{1.0, 2.0, 3.0}), 1e-6);
}

TEST(Roughness, ScaleAndShiftInvariant) {
  Rng rng(1);
  const auto v = noisy_sequence(200, rng);
  const double base = roughness(v);
  EXPECT_GT(base, 0.0);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<double> scaled(v);
    for (double& x : scaled) x *= c;
    EXPECT_NEAR(roughness(scaled), base, 1e-6);
  }
  std::vector<double> shifted(v);
  for (double& x : shifted) x += 42.0;
  EXPECT_NEAR(roughness(shifted), base, 1e-6);
  EXPECT_EQ(roughness(v), base);
}

TEST(Roughness, RejectsShortSequences) {
  EXPECT_THROW(roughness(std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Roughness, PipelineStagesAgreeWithHandComputation) {
  const std::vector<double> v{2.0, 4.0, 3.0};
  EXPECT_EQ(minmax_normalize(v), (std::vector<double>{0.0, 1.0, 0.5}));
  EXPECT_EQ(second_differences(std::vector<double>{1.0, 4.0, 9.0, 16.0}), (std::vector<double>{2.0, 2.0}));
  // Smoothing preserves affine input including at the ends.
  std::vector<double> line;
  for (int i = 0; i < 12; ++i) line.push_back(0.5 * i - 1.0);
  const auto sm = gaussian_smooth(line, 1.0);
  for (std::size_t i = 0; i < line.size(); ++i) EXPECT_NEAR(sm[i], line[i], 1e-12);
  // Interior of a long sequence: weights sum to one and are symmetric.
  std::vector<double> spike(21, 0.0);
  spike[10] = 1.0;
  const auto k = gaussian_smooth(spike, 1.0);
  double total = 0.0;
  for (double w : k) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(k[9], k[11]);
  EXPECT_NEAR(k[11] / k[10], std::exp(-0.5), 1e-12);
  EXPECT_EQ(k[15], 0.0);  // truncated beyond 4 sigma
}

TEST(Roughness, Windows) {
  Rng rng(2);
  const auto v = noisy_sequence(450, rng);
  const auto w = windowed_roughness(v, 200);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0], roughness(std::span<const double>(v).subspan(0, 200)));
  EXPECT_EQ(windowed_roughness(std::span<const double>(v).subspan(0, 50), 200).size(), 1u);
}

TEST(Slice, ZeroRadiusAndCenterValue) {
  const auto t = tiny_net(3);
  const auto blocks = parameter_blocks(t.arch);
  const auto g0 = slice(*t.f, t.theta, blocks, 2, 0.0, 5, 1);
  for (double v : g0.values) EXPECT_EQ(v, t.f->value(t.theta));
  const auto g = slice(*t.f, t.theta, blocks, 1, 1.0, 41, 2);
  EXPECT_NEAR(g.at(20), t.f->value(t.theta), 1e-12);
  EXPECT_EQ(g.coordinate(0), -1.0);
  EXPECT_EQ(g.coordinate(40), 1.0);
  EXPECT_THROW(slice(*t.f, t.theta, blocks, 1, 1.0, 4, 1), std::invalid_argument);
  EXPECT_THROW(slice(*t.f, t.theta, blocks, 3, 1.0, 5, 1), std::invalid_argument);
}

TEST(Slice, DirectionsUnitOrthogonalAndLayerMatched) {
  const auto t = tiny_net(4);
  const auto blocks = parameter_blocks(t.arch);
  const auto g = slice(*t.f, t.theta, blocks, 2, 0.5, 3, 9);
  ASSERT_EQ(g.directions.size(), 2u);
  EXPECT_NEAR(g.directions[0].norm(), 1.0, 1e-12);
  EXPECT_NEAR(g.directions[1].norm(), 1.0, 1e-12);
  EXPECT_NEAR(g.directions[0].dot(g.directions[1]), 0.0, 1e-12);
  // Per-block norms are proportional to the centre's block norms.
  const double ratio = g.directions[0].segment(blocks[0].first, blocks[0].second - blocks[0].first).norm() /
                       t.theta.segment(blocks[0].first, blocks[0].second - blocks[0].first).norm();
  for (const auto& [b, e] : blocks)
    EXPECT_NEAR(g.directions[0].segment(b, e - b).norm(), ratio * t.theta.segment(b, e - b).norm(), 1e-12);
}

TEST(Slice, QuadraticSliceIsExactParabola) {
  Rng rng(5);
  const int n = 12;
  Matrix m = Matrix::NullaryExpr(n, n, [&] { return rng.normal(); });
  const Matrix a = m * m.transpose();
  const QuadraticObjective f(a);
  const Vector center = random_vector(n, rng);
  const BlockList blocks{{0, 6}, {6, 12}};
  const auto g = slice(f, center, blocks, 1, 2.0, 21, 3);
  const Vector& d = g.directions[0];
  const double curv = d.dot(a * d);
  const double slope = d.dot(a * center);
  double worst = 0.0;
  for (int i = 0; i < g.resolution; ++i) {
    const double s = g.coordinate(i);
    worst = std::max(worst, std::abs(g.at(i) - (f.value(center) + s * slope + 0.5 * s * s * curv)));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(LocalMinima, Enumeration) {
  EXPECT_EQ(count_local_minima(std::vector<double>{3, 1, 2, 0, 4}), 2);
  EXPECT_EQ(count_local_minima(std::vector<double>{1, 2, 3, 4}), 0);
  EXPECT_EQ(count_local_minima(std::vector<double>{4, 1, 1, 4}), 0);
  std::vector<double> parabola;
  for (int i = -10; i <= 10; ++i) parabola.push_back((i - 0.3) * (i - 0.3));
  EXPECT_LE(count_local_minima(parabola), 1);
}

TEST(LocalMinima, StatisticsOnConvexQuadratic) {
  Rng rng(6);
  const QuadraticObjective f(Matrix::Identity(6, 6));
  const auto st = local_minima_statistics(f, random_vector(6, rng), {{0, 6}}, 20, 1.0, 41, 4);
  EXPECT_LE(st.mean, 1.0);
  EXPECT_EQ(st.slices, 20);
  EXPECT_EQ(st.resolution, 41);
}

TEST(TrajectoryLength, Properties) {
  Rng rng(7);
  const Vector a = random_vector(5, rng), b = random_vector(5, rng);
  EXPECT_EQ(trajectory_length(std::vector<Vector>{a, a, a}), 0.0);
  EXPECT_NEAR(trajectory_length(std::vector<Vector>{a, b}), (b - a).norm(), 1e-15);
  EXPECT_NEAR(trajectory_length(std::vector<Vector>{a, 0.25 * a + 0.75 * b, b}), (b - a).norm(), 1e-10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vector> path;
    for (int k = 0; k < 8; ++k) path.push_back(random_vector(5, rng));
    EXPECT_GE(trajectory_length(path) + 1e-12, (path.back() - path.front()).norm());
  }
  EXPECT_THROW(trajectory_length(std::vector<Vector>{a}), std::invalid_argument);
}

TEST(HessianTrace, IdentityWithinFivePercent) {
  Rng rng(8);
  const auto est = hessian_trace(diagonal(Vector::Ones(100)), 100, 200, rng);
  EXPECT_NEAR(est.estimate, 100.0, 5.0);
  EXPECT_EQ(est.probes, 200);
}

TEST(HessianTrace, SquaredLinearModelClosedForm) {
  // f(w) = Σ (xᵢ·w)² has Hessian 2XᵀX, trace 2Σ‖xᵢ‖².
  Rng rng(9);
  const Matrix x = Matrix::NullaryExpr(7, 4, [&] { return rng.normal(); });
  const QuadraticObjective f(2.0 * x.transpose() * x);
  const auto est = hessian_trace(hessian_operator(f, Vector::Zero(4)), 4, 4000, rng);
  const double exact = 2.0 * x.squaredNorm();
  EXPECT_NEAR(est.estimate, exact, 3.0 * est.stderr_estimate + 1e-12);
}

TEST(HessianTrace, TinyNetWithinThreeStandardErrors) {
  const auto t = tiny_net(10);
  const Matrix h = assemble_hessian(*t.f, t.theta);
  Rng rng(11);
  const auto est = hessian_trace(hessian_operator(*t.f, t.theta), h.rows(), 10000, rng);
  EXPECT_LT(std::abs(est.estimate - h.trace()), 3.0 * est.stderr_estimate);
}

TEST(Spectral, DiagonalSpectra) {
  Rng rng(12);
  Vector d(3);
  d << 4.0, 1.0, -2.0;
  const auto s = spectral_extremes(diagonal(d), 3, 2000, rng);
  EXPECT_NEAR(s.spectral_norm, 4.0, 1e-9);
  EXPECT_NEAR(s.lambda_max, 4.0, 1e-9);
  EXPECT_NEAR(s.lambda_min, -2.0, 1e-9);
  ASSERT_TRUE(s.condition.has_value());
  EXPECT_NEAR(*s.condition, -2.0, 1e-9);
  EXPECT_TRUE(s.converged);

  const auto id = spectral_extremes(diagonal(Vector::Ones(10)), 10, 50, rng);
  ASSERT_TRUE(id.condition.has_value());
  EXPECT_NEAR(*id.condition, 1.0, 1e-12);

  EXPECT_THROW(spectral_extremes(diagonal(d), 3, 5, rng), std::invalid_argument);
}

TEST(Spectral, ConditionNumberRules) {
  EXPECT_EQ(condition_number(4.0, -2.0), -2.0);
  EXPECT_FALSE(condition_number(4.0, 0.0).has_value());
  EXPECT_FALSE(condition_number(1.0, 1e-11).has_value());
  EXPECT_TRUE(condition_number(1.0, 1e-9).has_value());
}

TEST(Spectral, FlagsNonConvergence) {
  Rng rng(13);
  Vector d = Vector::LinSpaced(200, 0.5, 1.0);
  const auto s = spectral_extremes(diagonal(d), 200, 10, rng);
  EXPECT_FALSE(s.converged);
  EXPECT_GT(s.last_delta, kConvergenceTolerance);
}

TEST(Spectral, TinyNetMatchesDenseEigensolver) {
  for (std::uint64_t seed : {14u, 15u}) {
    const auto t = tiny_net(seed);
    const Matrix h = assemble_hessian(*t.f, t.theta);
    const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.transpose()));
    const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
    Rng rng(seed);
    const auto s = spectral_extremes(hessian_operator(*t.f, t.theta), h.rows(), 20000, rng);
    EXPECT_NEAR(s.lambda_max, lmax, 1e-4 * std::abs(lmax));
    EXPECT_NEAR(s.lambda_min, lmin, 1e-4 * std::abs(lmin));
    const double avg = h.trace() / static_cast<double>(h.rows());
    EXPECT_LE(s.lambda_min, avg);
    EXPECT_GE(s.lambda_max, avg);
    EXPECT_GE(s.spectral_norm, std::abs(h.trace()) / static_cast<double>(h.rows()));
  }
}

TEST(CurvatureDelta, Arithmetic) {
  CurvatureReport meta, sgd;
  meta.trace = 0.1;
  sgd.trace = 1.35;
  const auto d = curvature_delta(meta, sgd);
  ASSERT_TRUE(d.trace.has_value());
  EXPECT_NEAR(*d.trace, -0.926, 5e-4);
  EXPECT_FALSE(d.roughness.has_value());  // zero baseline

  sgd.roughness = meta.roughness = 0.4;
  sgd.spectral_norm = meta.spectral_norm = 3.0;
  sgd.condition = meta.condition = 12.0;
  sgd.trace = meta.trace;
  const auto same = curvature_delta(meta, sgd);
  EXPECT_EQ(*same.trace, 0.0);
  EXPECT_EQ(*same.roughness, 0.0);
  EXPECT_EQ(*same.spectral_norm, 0.0);
  EXPECT_EQ(*same.condition, 0.0);
  meta.condition.reset();
  EXPECT_FALSE(curvature_delta(meta, sgd).condition.has_value());
  EXPECT_NE(curvature_delta_json(meta, sgd, curvature_delta(meta, sgd)).find("\"Undefined\""), std::string::npos);
  EXPECT_NE(curvature_report_json(meta).find("\"Unbounded\""), std::string::npos);
}

TEST(SliceExport, HeaderAndRows) {
  const auto t = tiny_net(16);
  const auto g = slice(*t.f, t.theta, parameter_blocks(t.arch), 2, 1.0, 5, 21);
  const auto path = std::filesystem::temp_directory_path() / "boolmeta_slice.csv";
  write_slice_grid(path, g);
  std::ifstream in(path);
  std::string line;
  int headers = 0, rows = 0;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) == 0) {
      ++headers;
      continue;
    }
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
  }
  EXPECT_EQ(headers, 5);
  EXPECT_EQ(rows, 5);
  std::filesystem::remove(path);
}
