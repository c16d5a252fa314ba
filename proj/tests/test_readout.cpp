#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "fedesn/readout.hpp"
#include "fedesn/tasks.hpp"
#include "oracles.hpp"

using namespace fedesn;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidConfig;
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

ReadoutStats stats_from(const Matrix& a, const Matrix& b, std::int64_t n) {
  ReadoutStats s = ReadoutStats::zero(a.rows(), b.rows());
  s.a = a;
  s.b = b;
  s.n = n;
  return s;
}

double max_abs_diff(const Matrix& x, const Matrix& y) { return (x - y).cwiseAbs().maxCoeff(); }

}  // namespace

// --- harvest_stats -------------------------------------------------------

TEST(HarvestStats, SingleRowOuterProduct) {
  Matrix h(1, 2);
  h << 2, 1;
  const ReadoutStats s = harvest_stats(h, Matrix::Constant(1, 1, 4.0));
  Matrix a(2, 2);
  a << 4, 2, 2, 1;
  Matrix b(1, 2);
  b << 8, 4;
  EXPECT_EQ(s.a, a);
  EXPECT_EQ(s.b, b);
  EXPECT_EQ(s.n, 1);
}

TEST(HarvestStats, ZeroRowsGiveZeroStats) {
  const ReadoutStats s = harvest_stats(Matrix(0, 3), Matrix(0, 2));
  EXPECT_EQ(s.n, 0);
  EXPECT_EQ(s.d(), 3);
  EXPECT_EQ(s.n_y(), 2);
  EXPECT_TRUE((s.a.array() == 0.0).all());
  EXPECT_TRUE((s.b.array() == 0.0).all());
}

TEST(HarvestStats, RowCountMismatch) {
  EXPECT_EQ(code_of([] { harvest_stats(Matrix::Zero(3, 2), Matrix::Zero(2, 1)); }), ErrorCode::DimensionMismatch);
}

TEST(HarvestStats, MatchesExtendedPrecisionLoops) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix h = random_matrix(rng, rng.uniform_int(1, 200), rng.uniform_int(1, 12));
    const Matrix y = random_matrix(rng, h.rows(), rng.uniform_int(1, 3), -5.0, 5.0);
    const ReadoutStats s = harvest_stats(h, y);
    const oracle::LoopStats o = oracle::harvest_loops(h, y);
    EXPECT_LE(max_abs_diff(s.a, o.a), 1e-12 * std::max(1.0, o.a.cwiseAbs().maxCoeff()));
    EXPECT_LE(max_abs_diff(s.b, o.b), 1e-12 * std::max(1.0, o.b.cwiseAbs().maxCoeff()));
    EXPECT_EQ(s.n, o.n);
  }
}

TEST(HarvestStats, SymmetricAndPositiveSemidefinite) {
  Rng rng(6);
  const Matrix h = random_matrix(rng, 30, 6);
  const ReadoutStats s = harvest_stats(h, random_matrix(rng, 30, 1));
  EXPECT_EQ(s.a, s.a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(s.a);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
}

TEST(HarvestStats, AdditiveOverRows) {
  Rng rng(7);
  const Matrix h = random_matrix(rng, 2, 4);
  const Matrix y = random_matrix(rng, 2, 2);
  const ReadoutStats whole = harvest_stats(h, y);
  const ReadoutStats merged = merge_stats(harvest_stats(h.topRows(1), y.topRows(1)),
                                          harvest_stats(h.bottomRows(1), y.bottomRows(1)));
  EXPECT_LE(max_abs_diff(whole.a, merged.a), 1e-12);
  EXPECT_LE(max_abs_diff(whole.b, merged.b), 1e-12);
  EXPECT_EQ(whole.n, merged.n);
}

// --- merge_stats ---------------------------------------------------------

TEST(MergeStats, ZeroIsIdentity) {
  Rng rng(8);
  const ReadoutStats s = harvest_stats(random_matrix(rng, 20, 3), random_matrix(rng, 20, 1));
  const ReadoutStats m = merge_stats(s, ReadoutStats::zero(3, 1));
  EXPECT_EQ(m.a, s.a);
  EXPECT_EQ(m.b, s.b);
  EXPECT_EQ(m.n, s.n);
}

TEST(MergeStats, CommutativeAndAssociative) {
  Rng rng(9);
  std::vector<ReadoutStats> parts;
  for (int i = 0; i < 3; ++i)
    parts.push_back(harvest_stats(random_matrix(rng, 40, 5, -1e3, 1e3), random_matrix(rng, 40, 2)));
  const ReadoutStats ab = merge_stats(parts[0], parts[1]);
  const ReadoutStats ba = merge_stats(parts[1], parts[0]);
  const double scale = ab.a.cwiseAbs().maxCoeff();
  EXPECT_LE(max_abs_diff(ab.a, ba.a), 1e-12 * scale);
  const ReadoutStats left = merge_stats(ab, parts[2]);
  const ReadoutStats right = merge_stats(parts[0], merge_stats(parts[1], parts[2]));
  EXPECT_LE(max_abs_diff(left.a, right.a), 1e-12 * left.a.cwiseAbs().maxCoeff());
  EXPECT_LE(max_abs_diff(left.b, right.b), 1e-12 * std::max(1.0, left.b.cwiseAbs().maxCoeff()));
}

TEST(MergeStats, FiveClientsEqualConcatenatedHarvest) {
  Rng rng(10);
  const Matrix h = random_matrix(rng, 500, 8);
  const Matrix y = random_matrix(rng, 500, 1);
  ReadoutStats merged = ReadoutStats::zero(8, 1);
  for (int k = 0; k < 5; ++k) merged = merge_stats(merged, harvest_stats(h.middleRows(k * 100, 100), y.middleRows(k * 100, 100)));
  const oracle::LoopStats o = oracle::harvest_loops(h, y);
  EXPECT_LE(max_abs_diff(merged.a, o.a), 1e-12 * o.a.cwiseAbs().maxCoeff());
  EXPECT_LE(max_abs_diff(merged.b, o.b), 1e-12 * o.b.cwiseAbs().maxCoeff());
  EXPECT_EQ(merged.n, 500);
}

TEST(MergeStats, ShapeMismatch) {
  EXPECT_EQ(code_of([] { merge_stats(ReadoutStats::zero(2, 1), ReadoutStats::zero(3, 1)); }),
            ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([] { merge_stats(ReadoutStats::zero(2, 1), ReadoutStats::zero(2, 2)); }),
            ErrorCode::DimensionMismatch);
}

TEST(MergeStats, ChunkedHarvestEqualsBatch) {
  Rng rng(11);
  const Matrix h = random_matrix(rng, 300, 10);
  const Matrix y = random_matrix(rng, 300, 2);
  const ReadoutStats batch = harvest_stats(h, y);
  for (int split = 0; split < 10; ++split) {
    ReadoutStats acc = ReadoutStats::zero(10, 2);
    Eigen::Index at = 0;
    while (at < h.rows()) {
      const Eigen::Index len = std::min<Eigen::Index>(rng.uniform_int(1, 80), h.rows() - at);
      acc = merge_stats(acc, harvest_stats(h.middleRows(at, len), y.middleRows(at, len)));
      at += len;
    }
    EXPECT_LE(max_abs_diff(acc.a, batch.a), 1e-10);
    EXPECT_LE(max_abs_diff(acc.b, batch.b), 1e-10);
  }
}

// --- solve_readout -------------------------------------------------------

TEST(SolveReadout, IdentitySystem) {
  const Readout r = solve_readout(stats_from(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 2), 0.0);
  EXPECT_LE(max_abs_diff(r.w_out, Matrix::Identity(2, 2)), 1e-15);
  EXPECT_EQ(r.trained_on, 2);
  EXPECT_EQ(r.lambda, 0.0);
}

TEST(SolveReadout, ScalarNormalEquations) {
  EXPECT_DOUBLE_EQ(solve_readout(stats_from(Matrix::Constant(1, 1, 4), Matrix::Constant(1, 1, 8), 1), 0.0).w_out(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(solve_readout(stats_from(Matrix::Constant(1, 1, 1), Matrix::Constant(1, 1, 1), 1), 1.0).w_out(0, 0), 0.5);
}

TEST(SolveReadout, MatchesGaussianElimination) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = rng.uniform_int(1, 5);
    const Matrix h = random_matrix(rng, rng.uniform_int(d, 50), d);
    const Matrix y = random_matrix(rng, h.rows(), rng.uniform_int(1, 3));
    const double lambda = rng.bernoulli(0.2) ? 0.0 : std::pow(10.0, rng.uniform(-8, 1));
    const ReadoutStats s = harvest_stats(h, y);
    const Readout r = solve_readout(s, lambda);
    EXPECT_LE(max_abs_diff(r.w_out, oracle::ridge_gauss(s.a, s.b, lambda)), 1e-8);
    EXPECT_LE(relative_residual(r, s), kResidualTolerance);
  }
}

TEST(SolveReadout, RidgeShrinksScalarWeight) {
  const ReadoutStats s = stats_from(Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, -7.0), 5);
  double previous = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3}) {
    const double w = std::abs(solve_readout(s, lambda).w_out(0, 0));
    EXPECT_LE(w, previous);
    previous = w;
  }
}

TEST(SolveReadout, SingularWithoutRegularization) {
  EXPECT_EQ(code_of([] { solve_readout(ReadoutStats::zero(3, 1), 0.0); }), ErrorCode::SingularSystem);
  Matrix a(2, 2);
  a << 1, 1, 1, 1;
  // Rank deficient but nonzero trace: the jitter retry makes it solvable.
  const Readout r = solve_readout(stats_from(a, Matrix::Ones(1, 2), 2), 0.0);
  EXPECT_TRUE(r.w_out.allFinite());
}

TEST(SolveReadout, Errors) {
  EXPECT_EQ(code_of([] { solve_readout(ReadoutStats::zero(2, 1), -1.0); }), ErrorCode::InvalidConfig);
  ReadoutStats s = stats_from(Matrix::Identity(2, 2), Matrix::Ones(1, 2), 1);
  s.b(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { solve_readout(s, 1.0); }), ErrorCode::NotFinite);
}

// --- predict / metrics ---------------------------------------------------

TEST(Predict, Examples) {
  Readout identity{Matrix::Identity(2, 2), 0.0, 0};
  Vector h(2);
  h << 0.3, 1.0;
  EXPECT_EQ(predict(identity, h), h);

  Readout r{Matrix(1, 2), 0.0, 0};
  r.w_out << 2, 0;
  Vector h2(2);
  h2 << 3, 1;
  EXPECT_EQ(predict(r, h2)(0), 6.0);

  Readout zero{Matrix::Zero(3, 4), 0.0, 0};
  EXPECT_EQ(predict(zero, Vector::Constant(4, 9.0)), Vector::Zero(3));
  EXPECT_EQ(code_of([&] { predict(zero, Vector::Zero(3)); }), ErrorCode::DimensionMismatch);
}

TEST(Metrics, PerfectPrediction) {
  Matrix y(3, 1);
  y << 1, 2, 4;
  const Metrics m = compute_metrics(y, y);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.nrmse, 0.0);
  EXPECT_TRUE(m.nrmse_defined);
  EXPECT_EQ(m.n_eval, 3);
}

TEST(Metrics, ZeroPredictionOnUnitSignal) {
  Matrix y(2, 1);
  y << 1, -1;
  const Metrics m = compute_metrics(Matrix::Zero(2, 1), y);
  EXPECT_DOUBLE_EQ(m.mse, 1.0);
  EXPECT_DOUBLE_EQ(m.nrmse, 1.0);
}

TEST(Metrics, ConstantTargetsFlagNrmse) {
  const Metrics m = compute_metrics(Matrix::Zero(4, 1), Matrix::Constant(4, 1, 3.0));
  EXPECT_FALSE(m.nrmse_defined);
  EXPECT_DOUBLE_EQ(m.mse, 9.0);
  EXPECT_TRUE(to_json(m)["nrmse"].is_null());
}

TEST(Evaluate, TrainedModelOnSeries) {
  ReservoirConfig c;
  c.n_units = 30;
  c.washout = 20;
  const Reservoir res(c);
  const LabeledSeries s = gen_narma10(300, 3);
  const Readout r = solve_readout(harvest_series(res, s), 1e-6);
  const Metrics m = evaluate(r, res, s);
  EXPECT_EQ(m.n_eval, 280);
  const Matrix pred = predict_rows(r, res.run_series(s.input).rows);
  EXPECT_DOUBLE_EQ(m.mse, (pred - aligned_targets(s, 20)).squaredNorm() / 280.0);
  EXPECT_EQ(code_of([&] { evaluate(r, res, s.input, Matrix::Zero(3, 1)); }), ErrorCode::DimensionMismatch);
}

// --- serialization -------------------------------------------------------

TEST(ReadoutJson, StatsRoundTripExactly) {
  Rng rng(13);
  const ReadoutStats s = harvest_stats(random_matrix(rng, 25, 4), random_matrix(rng, 25, 2));
  const ReadoutStats back = readout_stats_from_json(json::parse(dump_json(to_json(s))));
  EXPECT_EQ(back.a, s.a);
  EXPECT_EQ(back.b, s.b);
  EXPECT_EQ(back.a_lo, s.a_lo);
  EXPECT_EQ(back.b_lo, s.b_lo);
  EXPECT_EQ(back.n, s.n);
}

TEST(ReadoutJson, ReadoutRoundTripExactly) {
  Rng rng(14);
  const Readout r{random_matrix(rng, 2, 5), 1e-6, 77};
  const Readout back = readout_from_json(json::parse(dump_json(to_json(r))));
  EXPECT_EQ(back.w_out, r.w_out);
  EXPECT_EQ(back.lambda, r.lambda);
  EXPECT_EQ(back.trained_on, 77);
}

TEST(ReadoutJson, PlainStatsWithoutCompensationTerms) {
  const json j = json::parse(R"({"a":[[4,2],[2,1]],"b":[[8,4]],"n":1,"d":2,"n_y":1})");
  const ReadoutStats s = readout_stats_from_json(j);
  EXPECT_EQ(s.a(0, 1), 2.0);
  EXPECT_EQ(s.a_lo, Matrix::Zero(2, 2));
}

TEST(ReadoutJson, ShapeErrors) {
  const json j = json::parse(R"({"w_out":[[1,2]],"d":3,"n_y":1,"lambda":0,"trained_on":1})");
  EXPECT_EQ(code_of([&] { readout_from_json(j); }), ErrorCode::SchemaError);
  const json k = json::parse(R"({"w_out":[[1,"x"]],"d":2,"n_y":1,"lambda":0,"trained_on":1})");
  EXPECT_EQ(code_of([&] { readout_from_json(k); }), ErrorCode::SchemaError);
}

TEST(JsonFormat, SeventeenDigitsAndSortedKeys) {
  EXPECT_EQ(dump_json(json{{"b", 0.1}, {"a", 1}}), R"({"a":1,"b":0.10000000000000001})");
  EXPECT_EQ(std::stod(format_double(0.1 + 0.2)), 0.1 + 0.2);
  EXPECT_EQ(code_of([] { dump_json(json(std::numeric_limits<double>::quiet_NaN())); }), ErrorCode::NotFinite);
}
