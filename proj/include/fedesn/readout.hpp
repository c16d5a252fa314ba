#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "fedesn/error.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/reservoir.hpp"
#include "fedesn/time_series.hpp"

namespace fedesn {

/// Additive normal-equation accumulators: a = sum h h^T, b = sum y h^T.
/// Summing two of these is the same as harvesting the union of their rows,
/// which is the whole basis of exact federation and continual updates.
///
/// Every entry is a double-double: `a`/`b` hold the rounded sums and
/// `a_lo`/`b_lo` the residual rounding error. Sums then agree to ~1e-32
/// relative regardless of how rows were grouped into partial sums, so the
/// rounded `a`/`b` seen by the solver are (almost always) bit-identical for
/// federated and centralized harvests.
struct ReadoutStats {
  Matrix a;
  Matrix b;
  std::int64_t n = 0;
  Matrix a_lo;
  Matrix b_lo;

  static ReadoutStats zero(Eigen::Index d, Eigen::Index n_y) {
    return {Matrix::Zero(d, d), Matrix::Zero(n_y, d), 0, Matrix::Zero(d, d), Matrix::Zero(n_y, d)};
  }

  Eigen::Index d() const noexcept { return a.rows(); }
  Eigen::Index n_y() const noexcept { return b.rows(); }
};

namespace detail {

// Error-free transformations. They rely on strict IEEE evaluation: no
// contraction of a*b+c into FMA (build with -ffp-contract=off).
inline void two_sum(double x, double y, double& s, double& e) {
  s = x + y;
  const double z = s - x;
  e = (x - (s - z)) + (y - z);
}

inline void fast_two_sum(double x, double y, double& s, double& e) {
  s = x + y;
  e = y - (s - x);
}

inline void split(double x, double& hi, double& lo) {
  const double c = 134217729.0 * x;  // 2^27 + 1
  hi = c - (c - x);
  lo = x - hi;
}

/// (hi, lo) += (x, xe), both operands normalized double-doubles.
inline void dd_add(double& hi, double& lo, double x, double xe) {
  double s, e, t, f;
  two_sum(hi, x, s, e);
  two_sum(lo, xe, t, f);
  e += t;
  fast_two_sum(s, e, s, e);
  e += f;
  fast_two_sum(s, e, hi, lo);
}

/// Adds the exact product x*y (as p + pe) into (hi, lo).
inline void dd_add_product(double& hi, double& lo, double x, double x_hi, double x_lo, double y,
                           double y_hi, double y_lo) {
  const double p = x * y;
  const double pe = ((x_hi * y_hi - p) + x_hi * y_lo + x_lo * y_hi) + x_lo * y_lo;
  dd_add(hi, lo, p, pe);
}

}  // namespace detail

struct Readout {
  Matrix w_out;
  double lambda = 0.0;
  std::int64_t trained_on = 0;

  Eigen::Index d() const noexcept { return w_out.cols(); }
  Eigen::Index n_y() const noexcept { return w_out.rows(); }
};

struct Metrics {
  double mse = 0.0;
  double nrmse = 0.0;
  bool nrmse_defined = true;
  std::int64_t n_eval = 0;
};

inline constexpr double kResidualTolerance = 1e-8;
inline constexpr double kVarianceFloor = 1e-15;

/// Single pass over the rows with compensated accumulation; only the upper
/// triangle of `a` is summed and then mirrored, so `a` is exactly symmetric.
inline ReadoutStats harvest_stats(const Matrix& features, const Matrix& targets) {
  require(features.rows() == targets.rows(), ErrorCode::DimensionMismatch,
          "feature and target row counts differ");
  require(targets.allFinite(), ErrorCode::NotFinite, "targets contain non-finite values");
  require(features.allFinite(), ErrorCode::NotFinite, "features contain non-finite values");
  const Eigen::Index d = features.cols();
  const Eigen::Index n_y = targets.cols();
  ReadoutStats s = ReadoutStats::zero(d, n_y);
  Vector h_hi(d), h_lo(d), y_hi(n_y), y_lo(n_y);
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index i = 0; i < d; ++i) detail::split(features(r, i), h_hi(i), h_lo(i));
    for (Eigen::Index k = 0; k < n_y; ++k) detail::split(targets(r, k), y_hi(k), y_lo(k));
    for (Eigen::Index j = 0; j < d; ++j) {
      const double hj = features(r, j);
      for (Eigen::Index i = 0; i <= j; ++i)
        detail::dd_add_product(s.a(i, j), s.a_lo(i, j), features(r, i), h_hi(i), h_lo(i), hj,
                               h_hi(j), h_lo(j));
      for (Eigen::Index k = 0; k < n_y; ++k)
        detail::dd_add_product(s.b(k, j), s.b_lo(k, j), targets(r, k), y_hi(k), y_lo(k), hj,
                               h_hi(j), h_lo(j));
    }
  }
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < j; ++i) {
      s.a(j, i) = s.a(i, j);
      s.a_lo(j, i) = s.a_lo(i, j);
    }
  s.n = features.rows();
  return s;
}

inline ReadoutStats harvest_stats(const StateMatrix& states, const Matrix& targets) {
  return harvest_stats(states.rows, targets);
}

inline ReadoutStats merge_stats(const ReadoutStats& s1, const ReadoutStats& s2) {
  require(s1.d() == s2.d() && s1.n_y() == s2.n_y(), ErrorCode::DimensionMismatch,
          "cannot merge statistics of different shapes");
  ReadoutStats out = s1;
  for (Eigen::Index j = 0; j < out.d(); ++j) {
    for (Eigen::Index i = 0; i < out.d(); ++i)
      detail::dd_add(out.a(i, j), out.a_lo(i, j), s2.a(i, j), s2.a_lo(i, j));
    for (Eigen::Index k = 0; k < out.n_y(); ++k)
      detail::dd_add(out.b(k, j), out.b_lo(k, j), s2.b(k, j), s2.b_lo(k, j));
  }
  out.n = s1.n + s2.n;
  return out;
}

/// W_out = b (a + lambda I)^-1 via Cholesky of (a + lambda I). lambda is
/// added to the raw accumulator, never scaled by n, so federated sums stay
/// exact. With lambda = 0 a failed factorization is retried once with jitter
/// 1e-10 * trace(a) / D.
inline Readout solve_readout(const ReadoutStats& stats, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::InvalidConfig,
          "lambda must be finite and nonnegative");
  require(stats.a.allFinite() && stats.b.allFinite(), ErrorCode::NotFinite,
          "statistics contain non-finite values");
  require(stats.a.rows() == stats.a.cols(), ErrorCode::DimensionMismatch, "a must be square");
  require(stats.d() > 0 && stats.b.cols() == stats.d(), ErrorCode::DimensionMismatch,
          "malformed statistics");
  const Eigen::Index d = stats.d();

  Matrix system = stats.a;
  system.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success && lambda == 0.0) {
    const double jitter = 1e-10 * stats.a.trace() / static_cast<double>(d);
    if (jitter > 0.0) {
      system.diagonal().array() += jitter;
      llt.compute(system);
    }
  }
  require(llt.info() == Eigen::Success, ErrorCode::SingularSystem,
          "normal equations are not positive definite");

  Matrix wt = llt.solve(stats.b.transpose());
  // One refinement step against the system actually factorized.
  wt += llt.solve(stats.b.transpose() - system * wt);
  require(wt.allFinite(), ErrorCode::SingularSystem, "solve produced non-finite weights");
  return {wt.transpose(), lambda, stats.n};
}

/// max|W (a + lambda I) - b| / max(1, max|b|)
inline double relative_residual(const Readout& r, const ReadoutStats& stats) {
  Matrix system = stats.a;
  system.diagonal().array() += r.lambda;
  const double scale = std::max(1.0, stats.b.cwiseAbs().maxCoeff());
  return (r.w_out * system - stats.b).cwiseAbs().maxCoeff() / scale;
}

template <typename FeatureVec>
Vector predict(const Readout& readout, const FeatureVec& features) {
  require(features.size() == readout.d(), ErrorCode::DimensionMismatch,
          "feature length does not match readout");
  return readout.w_out * Vector(features);
}

inline Matrix predict_rows(const Readout& readout, const Matrix& features) {
  require(features.cols() == readout.d(), ErrorCode::DimensionMismatch,
          "feature width does not match readout");
  return features * readout.w_out.transpose();
}

/// MSE over every entry; NRMSE divides sqrt(MSE) by the target standard
/// deviation (per-column population variance, averaged over columns).
inline Metrics compute_metrics(const Matrix& predictions, const Matrix& targets) {
  require(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(),
          ErrorCode::DimensionMismatch, "prediction and target shapes differ");
  require(targets.rows() > 0, ErrorCode::SeriesTooShort, "no evaluation rows");
  Metrics m;
  m.n_eval = targets.rows();
  m.mse = (predictions - targets).squaredNorm() / static_cast<double>(targets.size());
  const Eigen::RowVectorXd mean = targets.colwise().mean();
  const double variance =
      (targets.rowwise() - mean).squaredNorm() / static_cast<double>(targets.size());
  if (variance < kVarianceFloor) {
    m.nrmse_defined = false;
    m.nrmse = 0.0;
  } else {
    m.nrmse = std::sqrt(m.mse / variance);
  }
  return m;
}

/// `targets` are aligned with the post-washout steps of `series`.
inline Metrics evaluate(const Readout& readout, const Reservoir& res, const TimeSeries& series,
                        const Matrix& targets) {
  const StateMatrix states = res.run_series(series);
  require(targets.rows() == states.size(), ErrorCode::DimensionMismatch,
          "targets must align with post-washout steps");
  return compute_metrics(predict_rows(readout, states.rows), targets);
}

inline Metrics evaluate(const Readout& readout, const Reservoir& res, const LabeledSeries& series) {
  const auto washout = res.config().washout;
  require(series.length() > washout, ErrorCode::SeriesTooShort, "series shorter than washout");
  return evaluate(readout, res, series.input, series.target.bottomRows(series.length() - washout));
}

/// Post-washout target rows of a labeled series.
inline Matrix aligned_targets(const LabeledSeries& series, std::int64_t washout) {
  require(series.length() > washout, ErrorCode::SeriesTooShort, "series shorter than washout");
  return series.target.bottomRows(series.length() - washout);
}

inline ReadoutStats harvest_series(const Reservoir& res, const LabeledSeries& series) {
  return harvest_stats(res.run_series(series.input), aligned_targets(series, res.config().washout));
}

inline json to_json(const ReadoutStats& s) {
  return json{{"a", matrix_to_json(s.a)},       {"b", matrix_to_json(s.b)},
              {"a_lo", matrix_to_json(s.a_lo)}, {"b_lo", matrix_to_json(s.b_lo)},
              {"n", s.n},                       {"d", s.d()},
              {"n_y", s.n_y()}};
}

inline ReadoutStats readout_stats_from_json(const json& j) {
  const auto d = get_field<std::int64_t>(j, "d");
  const auto n_y = get_field<std::int64_t>(j, "n_y");
  require(d >= 1 && n_y >= 1, ErrorCode::SchemaError, "stats dimensions must be positive");
  ReadoutStats s;
  s.a = matrix_from_json(field(j, "a"), d, d);
  s.b = matrix_from_json(field(j, "b"), n_y, d);
  s.n = get_field<std::int64_t>(j, "n");
  require(s.n >= 0, ErrorCode::SchemaError, "negative sample count");
  // Compensation terms are optional; plain (a, b) stats are accepted as-is.
  s.a_lo = j.contains("a_lo") ? matrix_from_json(j["a_lo"], d, d) : Matrix::Zero(d, d);
  s.b_lo = j.contains("b_lo") ? matrix_from_json(j["b_lo"], n_y, d) : Matrix::Zero(n_y, d);
  return s;
}

inline json to_json(const Readout& r) {
  return json{{"w_out", matrix_to_json(r.w_out)}, {"d", r.d()},           {"n_y", r.n_y()},
              {"lambda", r.lambda},               {"trained_on", r.trained_on}};
}

inline Readout readout_from_json(const json& j) {
  const auto d = get_field<std::int64_t>(j, "d");
  const auto n_y = get_field<std::int64_t>(j, "n_y");
  require(d >= 1 && n_y >= 1, ErrorCode::SchemaError, "readout dimensions must be positive");
  Readout r;
  r.w_out = matrix_from_json(field(j, "w_out"), n_y, d);
  r.lambda = get_field<double>(j, "lambda");
  r.trained_on = get_field<std::int64_t>(j, "trained_on");
  require(r.w_out.allFinite(), ErrorCode::SchemaError, "readout contains non-finite weights");
  return r;
}

inline json to_json(const Metrics& m) {
  json j{{"mse", m.mse}, {"n_eval", m.n_eval}, {"nrmse_defined", m.nrmse_defined}};
  j["nrmse"] = m.nrmse_defined ? json(m.nrmse) : json(nullptr);
  return j;
}

/// Fingerprint of a readout's canonical JSON, used in reports.
inline std::string fingerprint(const Readout& r) { return to_hex16(fnv1a64(dump_json(to_json(r)))); }

}  // namespace fedesn
