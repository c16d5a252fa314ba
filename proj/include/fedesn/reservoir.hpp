#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedesn/error.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/random.hpp"
#include "fedesn/spectral.hpp"
#include "fedesn/time_series.hpp"

namespace fedesn {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Hyperparameters of the untrained part of an echo state network.
struct ReservoirConfig {
  std::int64_t n_units = 100;
  std::int64_t input_dim = 1;
  double spectral_radius = 0.9;
  double input_scaling = 1.0;
  double leak_rate = 1.0;
  double density = 0.1;
  double bias_scaling = 0.0;
  std::uint64_t seed = 0;
  std::int64_t washout = 100;

  void validate() const {
    const auto check = [](bool ok, const char* what) {
      require(ok, ErrorCode::InvalidConfig, what);
    };
    check(n_units >= 1, "n_units must be positive");
    check(input_dim >= 1, "input_dim must be positive");
    check(spectral_radius > 0.0 && spectral_radius <= 1.5, "spectral_radius must lie in (0, 1.5]");
    check(input_scaling > 0.0 && std::isfinite(input_scaling), "input_scaling must be positive");
    check(leak_rate > 0.0 && leak_rate <= 1.0, "leak_rate must lie in (0, 1]");
    check(density > 0.0 && density <= 1.0, "density must lie in (0, 1]");
    check(bias_scaling >= 0.0 && std::isfinite(bias_scaling), "bias_scaling must be nonnegative");
    check(washout >= 0, "washout must be nonnegative");
  }

  friend bool operator==(const ReservoirConfig&, const ReservoirConfig&) = default;
};

inline json to_json(const ReservoirConfig& c) {
  return json{{"n_units", c.n_units},         {"input_dim", c.input_dim},
              {"spectral_radius", c.spectral_radius}, {"input_scaling", c.input_scaling},
              {"leak_rate", c.leak_rate},     {"density", c.density},
              {"bias_scaling", c.bias_scaling}, {"seed", c.seed},
              {"washout", c.washout}};
}

inline ReservoirConfig reservoir_config_from_json(const json& j) {
  static const std::set<std::string> known{"n_units",   "input_dim", "spectral_radius",
                                           "input_scaling", "leak_rate", "density",
                                           "bias_scaling", "seed",      "washout"};
  require(j.is_object(), ErrorCode::SchemaError, "reservoir config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    require(known.count(it.key()) == 1, ErrorCode::SchemaError,
            "unknown reservoir config field '" + it.key() + "'");
  ReservoirConfig c;
  c.n_units = get_field<std::int64_t>(j, "n_units");
  c.input_dim = get_field<std::int64_t>(j, "input_dim");
  c.spectral_radius = get_field<double>(j, "spectral_radius");
  c.input_scaling = get_field<double>(j, "input_scaling");
  c.leak_rate = get_field<double>(j, "leak_rate");
  c.density = get_field<double>(j, "density");
  c.bias_scaling = get_field<double>(j, "bias_scaling");
  c.seed = get_field<std::uint64_t>(j, "seed");
  c.washout = get_field<std::int64_t>(j, "washout");
  c.validate();
  return c;
}

/// Compact, sorted-key, 17-digit form. Hashing this is what makes two
/// processes agree they built the same reservoir.
inline std::string canonical_json(const ReservoirConfig& c) { return dump_json(to_json(c)); }

inline std::string fingerprint(const ReservoirConfig& c) {
  return to_hex16(fnv1a64(canonical_json(c)));
}

struct ReservoirState {
  Vector x;
  std::int64_t t = 0;
};

/// Harvested feature rows [x(t); 1] for every post-washout step.
struct StateMatrix {
  Matrix rows;
  Eigen::Index washout_used = 0;

  Eigen::Index size() const noexcept { return rows.rows(); }
  Eigen::Index feature_dim() const noexcept { return rows.cols(); }
};

struct EchoStateReport {
  double max_final_divergence = 0.0;
  bool converged = false;
};

inline constexpr double kEchoStateThreshold = 1e-6;

class Reservoir {
 public:
  /// Draw order (part of the seed contract): w_in row-major, then bias, then
  /// w_r row-major where each entry consumes one mask draw and, if kept, one
  /// value draw. All draws come from one Rng(config.seed).
  explicit Reservoir(const ReservoirConfig& config) : config_(config) {
    config_.validate();
    const auto nx = static_cast<Eigen::Index>(config_.n_units);
    const auto nu = static_cast<Eigen::Index>(config_.input_dim);
    Rng rng(config_.seed);

    w_in_.resize(nx, nu);
    for (Eigen::Index i = 0; i < nx; ++i)
      for (Eigen::Index j = 0; j < nu; ++j)
        w_in_(i, j) = rng.uniform(-config_.input_scaling, config_.input_scaling);

    bias_.resize(nx);
    for (Eigen::Index i = 0; i < nx; ++i)
      bias_(i) = rng.uniform(-config_.bias_scaling, config_.bias_scaling);

    std::vector<Eigen::Triplet<double>> entries;
    for (Eigen::Index i = 0; i < nx; ++i)
      for (Eigen::Index j = 0; j < nx; ++j)
        if (rng.uniform01() < config_.density) entries.emplace_back(i, j, rng.uniform(-1.0, 1.0));
    w_r_.resize(nx, nx);
    w_r_.setFromTriplets(entries.begin(), entries.end());

    const SpectralEstimate raw = fedesn::spectral_radius(w_r_);
    require(raw.value >= 1e-12, ErrorCode::DegenerateReservoir,
            "recurrent matrix has (near) zero spectral radius; cannot rescale");
    w_r_ *= config_.spectral_radius / raw.value;
  }

  /// Assembles a reservoir from explicit matrices without the spectral
  /// rescaling. Meant for tests and hand-built toy systems.
  static Reservoir from_parts(const ReservoirConfig& config, Matrix w_in, const Matrix& w_r,
                              Vector bias) {
    require(w_in.rows() == config.n_units && w_in.cols() == config.input_dim,
            ErrorCode::DimensionMismatch, "w_in shape does not match config");
    require(w_r.rows() == config.n_units && w_r.cols() == config.n_units,
            ErrorCode::DimensionMismatch, "w_r shape does not match config");
    require(bias.size() == config.n_units, ErrorCode::DimensionMismatch,
            "bias length does not match config");
    Reservoir r;
    r.config_ = config;
    r.w_in_ = std::move(w_in);
    r.w_r_ = w_r.sparseView(0.0, 0.0);
    r.bias_ = std::move(bias);
    return r;
  }

  const ReservoirConfig& config() const noexcept { return config_; }
  const Matrix& w_in() const noexcept { return w_in_; }
  const SparseMatrix& w_r() const noexcept { return w_r_; }
  Matrix w_r_dense() const { return Matrix(w_r_); }
  const Vector& bias() const noexcept { return bias_; }
  Eigen::Index n_units() const noexcept { return w_in_.rows(); }
  Eigen::Index input_dim() const noexcept { return w_in_.cols(); }
  Eigen::Index feature_dim() const noexcept { return w_in_.rows() + 1; }

  ReservoirState initial_state() const { return {Vector::Zero(n_units()), 0}; }

  /// x(t) = (1 - a) x(t-1) + a tanh(W_in u(t) + W_r x(t-1) + b)
  template <typename InputVec>
  ReservoirState update_state(const ReservoirState& state, const InputVec& input) const {
    require(input.size() == input_dim(), ErrorCode::DimensionMismatch,
            "input length does not match reservoir input_dim");
    require(state.x.size() == n_units(), ErrorCode::DimensionMismatch,
            "state length does not match reservoir size");
    const double a = config_.leak_rate;
    const Vector u = input;
    const Vector pre = w_in_ * u + w_r_ * state.x + bias_;
    const Vector activation = pre.unaryExpr([](double v) { return std::tanh(v); });
    ReservoirState next;
    next.x = a == 1.0 ? activation : Vector((1.0 - a) * state.x + a * activation);
    next.t = state.t + 1;
    return next;
  }

  /// Runs from the zero state, drops `washout` steps, appends the bias feature.
  StateMatrix run_series(const TimeSeries& series, std::int64_t washout) const {
    require(series.dim() == input_dim(), ErrorCode::DimensionMismatch,
            "series dimensionality does not match reservoir input_dim");
    require(washout >= 0 && series.length() > washout, ErrorCode::SeriesTooShort,
            "series length " + std::to_string(series.length()) + " must exceed washout " +
                std::to_string(washout));
    StateMatrix out;
    out.washout_used = static_cast<Eigen::Index>(washout);
    out.rows.resize(series.length() - washout, feature_dim());
    ReservoirState state = initial_state();
    for (Eigen::Index t = 0; t < series.length(); ++t) {
      state = update_state(state, series.step(t).transpose());
      if (t >= washout) {
        const Eigen::Index r = t - washout;
        out.rows.row(r).head(n_units()) = state.x.transpose();
        out.rows(r, n_units()) = 1.0;
      }
    }
    return out;
  }

  StateMatrix run_series(const TimeSeries& series) const {
    return run_series(series, config_.washout);
  }

  /// Final-state divergence when the same probe is driven from several
  /// random initial states; trial i starts from Rng(trial_seeds[i]).
  EchoStateReport check_echo_state(const TimeSeries& probe,
                                   std::span<const std::uint64_t> trial_seeds) const {
    require(probe.length() >= 200, ErrorCode::SeriesTooShort, "echo-state probe needs T >= 200");
    require(trial_seeds.size() >= 2, ErrorCode::InvalidConfig, "echo-state check needs >= 2 trials");
    require(probe.dim() == input_dim(), ErrorCode::DimensionMismatch,
            "probe dimensionality does not match reservoir input_dim");
    std::vector<Vector> finals;
    for (std::uint64_t seed : trial_seeds) {
      Rng rng(seed);
      ReservoirState state{Vector(n_units()), 0};
      for (Eigen::Index i = 0; i < n_units(); ++i) state.x(i) = rng.uniform(-1.0, 1.0);
      for (Eigen::Index t = 0; t < probe.length(); ++t)
        state = update_state(state, probe.step(t).transpose());
      finals.push_back(std::move(state.x));
    }
    EchoStateReport report;
    for (std::size_t i = 0; i < finals.size(); ++i)
      for (std::size_t j = i + 1; j < finals.size(); ++j)
        report.max_final_divergence = std::max(
            report.max_final_divergence, (finals[i] - finals[j]).lpNorm<Eigen::Infinity>());
    report.converged = report.max_final_divergence < kEchoStateThreshold;
    return report;
  }

  EchoStateReport check_echo_state(const TimeSeries& probe, int n_trials,
                                   std::uint64_t seed) const {
    require(n_trials >= 2, ErrorCode::InvalidConfig, "echo-state check needs >= 2 trials");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n_trials; ++i) seeds.push_back(seed + static_cast<std::uint64_t>(i));
    return check_echo_state(probe, seeds);
  }

 private:
  Reservoir() = default;

  ReservoirConfig config_;
  Matrix w_in_;
  SparseMatrix w_r_;
  Vector bias_;
};

}  // namespace fedesn
