#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>

#include "fedesn/error.hpp"
#include "fedesn/random.hpp"

namespace fedesn {

struct SpectralEstimate {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

inline constexpr int kSpectralMaxIterations = 1000;
inline constexpr double kSpectralTolerance = 1e-10;

namespace detail {

inline Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& block) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(block);
  return qr.householderQ() * Eigen::MatrixXd::Identity(block.rows(), block.cols());
}

/// Block power iteration with Rayleigh-Ritz extraction. Handles dominant
/// complex-conjugate pairs and +/- real pairs, where single-vector power
/// iteration oscillates forever.
template <typename M>
SpectralEstimate subspace_iteration(const M& m, int start_iterations) {
  const Eigen::Index n = m.rows();
  const Eigen::Index k = std::min<Eigen::Index>(n, 8);
  Eigen::MatrixXd start(n, k);
  start.col(0).setOnes();
  Rng rng(0x5eed5eedULL);
  for (Eigen::Index j = 1; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i) start(i, j) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd q = orthonormal_columns(start);

  SpectralEstimate est;
  est.iterations = start_iterations;
  for (int it = 0; it < kSpectralMaxIterations; ++it) {
    ++est.iterations;
    const Eigen::MatrixXd z = m * q;
    const Eigen::MatrixXd h = q.transpose() * z;
    Eigen::EigenSolver<Eigen::MatrixXd> ritz(h, true);
    const auto& theta = ritz.eigenvalues();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < theta.size(); ++i)
      if (std::abs(theta(i)) > std::abs(theta(best))) best = i;
    const double magnitude = std::abs(theta(best));
    const Eigen::VectorXcd y = ritz.eigenvectors().col(best);
    const Eigen::VectorXcd residual =
        z.cast<std::complex<double>>() * y - theta(best) * (q.cast<std::complex<double>>() * y);
    est.value = magnitude;
    if (residual.norm() <= kSpectralTolerance * std::max(magnitude, 1e-300) ||
        z.norm() == 0.0) {
      est.converged = true;
      return est;
    }
    q = orthonormal_columns(z);
  }
  return est;
}

}  // namespace detail

/// Largest eigenvalue magnitude of a square matrix (dense or sparse).
///
/// Plain power iteration from the all-ones vector runs first (up to 1000
/// steps, converged when the eigen-residual drops below 1e-10 relative). If it
/// stalls, an 8-column subspace iteration takes over. `converged` is false
/// only when both give up; `value` then holds the last Ritz magnitude.
template <typename M>
SpectralEstimate spectral_radius(const M& m) {
  require(m.rows() > 0 && m.cols() > 0, ErrorCode::EmptyMatrix, "spectral radius of empty matrix");
  require(m.rows() == m.cols(), ErrorCode::DimensionMismatch, "spectral radius needs a square matrix");
  const Eigen::Index n = m.rows();

  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  SpectralEstimate est;
  for (int it = 0; it < kSpectralMaxIterations; ++it) {
    ++est.iterations;
    const Eigen::VectorXd y = m * v;
    const double norm_y = y.norm();
    if (!std::isfinite(norm_y)) fail(ErrorCode::NotFinite, "matrix has non-finite entries");
    if (norm_y == 0.0) {
      est.value = 0.0;
      est.converged = true;
      return est;
    }
    const double rayleigh = v.dot(y);
    est.value = std::abs(rayleigh);
    if ((y - rayleigh * v).norm() <= kSpectralTolerance * norm_y) {
      est.converged = true;
      return est;
    }
    v = y / norm_y;
  }
  return detail::subspace_iteration(m, est.iterations);
}

}  // namespace fedesn
