#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

#include "fedesn/error.hpp"

namespace fedesn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Ordered multivariate observations, one row per step.
class TimeSeries {
 public:
  TimeSeries() = default;

  explicit TimeSeries(Matrix values) : values_(std::move(values)) {
    require(values_.rows() >= 1, ErrorCode::SeriesTooShort, "time series needs at least one step");
    require(values_.cols() >= 1, ErrorCode::DimensionMismatch, "time series needs at least one channel");
    require(values_.allFinite(), ErrorCode::NonFinite, "time series contains non-finite values");
  }

  Eigen::Index length() const noexcept { return values_.rows(); }
  Eigen::Index dim() const noexcept { return values_.cols(); }
  const Matrix& values() const noexcept { return values_; }
  auto step(Eigen::Index t) const { return values_.row(t); }

  friend bool operator==(const TimeSeries& a, const TimeSeries& b) {
    return a.values_.rows() == b.values_.rows() && a.values_.cols() == b.values_.cols() &&
           a.values_ == b.values_;
  }

 private:
  Matrix values_;
};

/// Input series with a step-aligned target matrix.
struct LabeledSeries {
  TimeSeries input;
  Matrix target;

  LabeledSeries() = default;
  LabeledSeries(TimeSeries in, Matrix tgt) : input(std::move(in)), target(std::move(tgt)) {
    require(target.rows() == input.length(), ErrorCode::DimensionMismatch,
            "target rows must match input length");
    require(target.cols() >= 1, ErrorCode::DimensionMismatch, "target needs at least one column");
    require(target.allFinite(), ErrorCode::NonFinite, "target contains non-finite values");
  }

  Eigen::Index length() const noexcept { return input.length(); }

  friend bool operator==(const LabeledSeries& a, const LabeledSeries& b) {
    return a.input == b.input && a.target.rows() == b.target.rows() &&
           a.target.cols() == b.target.cols() && a.target == b.target;
  }
};

}  // namespace fedesn
