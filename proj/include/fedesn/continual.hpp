#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedesn/error.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"

namespace fedesn {

struct Experience {
  std::int64_t id = 0;
  std::vector<LabeledSeries> data;
  std::string description;
};

enum class ContinualStrategy { CumulativeStats, NaiveRefit };

inline std::string to_string(ContinualStrategy s) {
  return s == ContinualStrategy::CumulativeStats ? "cumulative_stats" : "naive_refit";
}

inline ContinualStrategy continual_strategy_from_string(const std::string& s) {
  if (s == "cumulative_stats") return ContinualStrategy::CumulativeStats;
  if (s == "naive_refit") return ContinualStrategy::NaiveRefit;
  fail(ErrorCode::SchemaError, "unknown continual strategy '" + s + "'");
}

/// Snapshot after training on one experience.
struct ContinualStep {
  std::int64_t experience_id = 0;
  Readout readout;
  std::int64_t accumulator_n = 0;
  std::vector<Metrics> seen;  // held-out metrics on experiences 0..this one
};

struct ContinualRun {
  ContinualStrategy strategy = ContinualStrategy::CumulativeStats;
  std::vector<std::int64_t> experience_ids;
  std::vector<std::string> descriptions;
  std::vector<ContinualStep> steps;
};

/// Train/held-out split of one experience: the last 20% of every series'
/// post-washout rows (at least one row) are held out.
struct ExperienceSplit {
  ReadoutStats train;
  Matrix holdout_features;
  Matrix holdout_targets;
};

inline constexpr double kHoldoutFraction = 0.2;

inline ExperienceSplit split_experience(const Reservoir& res, const Experience& exp) {
  require(!exp.data.empty(), ErrorCode::InvalidConfig,
          "experience " + std::to_string(exp.id) + " has no data");
  const auto washout = res.config().washout;
  std::optional<ReadoutStats> train;
  std::vector<Matrix> hold_h;
  std::vector<Matrix> hold_y;
  Eigen::Index hold_rows = 0;
  for (const auto& series : exp.data) {
    const StateMatrix states = res.run_series(series.input);
    const Matrix targets = aligned_targets(series, washout);
    const Eigen::Index rows = states.size();
    const Eigen::Index n_hold =
        std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::floor(kHoldoutFraction * rows)));
    require(rows - n_hold >= 1, ErrorCode::SeriesTooShort,
            "experience " + std::to_string(exp.id) + " series too short to split");
    ReadoutStats s = harvest_stats(states.rows.topRows(rows - n_hold), targets.topRows(rows - n_hold));
    train = train ? merge_stats(*train, s) : std::move(s);
    hold_h.push_back(states.rows.bottomRows(n_hold));
    hold_y.push_back(targets.bottomRows(n_hold));
    hold_rows += n_hold;
  }
  ExperienceSplit out;
  out.train = std::move(*train);
  out.holdout_features.resize(hold_rows, hold_h.front().cols());
  out.holdout_targets.resize(hold_rows, hold_y.front().cols());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < hold_h.size(); ++i) {
    out.holdout_features.middleRows(at, hold_h[i].rows()) = hold_h[i];
    out.holdout_targets.middleRows(at, hold_y[i].rows()) = hold_y[i];
    at += hold_h[i].rows();
  }
  return out;
}

/// Learns a sequence of experiences on one fixed reservoir.
/// CumulativeStats merges each experience's statistics into a running
/// accumulator and re-solves; NaiveRefit solves on the newest experience only.
/// After each experience the readout is scored on every experience seen so far.
inline ContinualRun train_continual(const Reservoir& res, const std::vector<Experience>& experiences,
                                    ContinualStrategy strategy, double lambda) {
  require(!experiences.empty(), ErrorCode::InvalidConfig, "continual run needs experiences");
  for (std::size_t i = 1; i < experiences.size(); ++i)
    require(experiences[i].id > experiences[i - 1].id, ErrorCode::InvalidConfig,
            "experiences must be ordered by strictly increasing id");

  std::vector<ExperienceSplit> splits;
  for (const auto& exp : experiences) splits.push_back(split_experience(res, exp));

  ContinualRun run;
  run.strategy = strategy;
  std::optional<ReadoutStats> accumulator;
  for (std::size_t j = 0; j < experiences.size(); ++j) {
    run.experience_ids.push_back(experiences[j].id);
    run.descriptions.push_back(experiences[j].description);
    if (strategy == ContinualStrategy::CumulativeStats && accumulator) {
      accumulator = merge_stats(*accumulator, splits[j].train);
    } else {
      accumulator = splits[j].train;
    }
    ContinualStep step;
    step.experience_id = experiences[j].id;
    step.readout = solve_readout(*accumulator, lambda);
    step.accumulator_n = accumulator->n;
    for (std::size_t i = 0; i <= j; ++i)
      step.seen.push_back(compute_metrics(predict_rows(step.readout, splits[i].holdout_features),
                                          splits[i].holdout_targets));
    run.steps.push_back(std::move(step));
  }
  return run;
}

/// F[i][j]: held-out NRMSE on experience i after training through j (j >= i).
/// Entries with j < i, or with undefined NRMSE, are NaN.
struct ForgettingReport {
  Matrix nrmse;
  std::vector<double> forgetting;  // F[i][last] - F[i][i]
};

inline ForgettingReport forgetting_metrics(const ContinualRun& run) {
  const auto count = static_cast<Eigen::Index>(run.steps.size());
  require(count >= 1, ErrorCode::InvalidConfig, "empty continual run");
  ForgettingReport rep;
  rep.nrmse = Matrix::Constant(count, count, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index j = 0; j < count; ++j) {
    const auto& seen = run.steps[static_cast<std::size_t>(j)].seen;
    require(static_cast<Eigen::Index>(seen.size()) == j + 1, ErrorCode::InvalidConfig,
            "malformed continual run");
    for (Eigen::Index i = 0; i <= j; ++i) {
      const Metrics& m = seen[static_cast<std::size_t>(i)];
      if (m.nrmse_defined) rep.nrmse(i, j) = m.nrmse;
    }
  }
  for (Eigen::Index i = 0; i < count; ++i)
    rep.forgetting.push_back(rep.nrmse(i, count - 1) - rep.nrmse(i, i));
  return rep;
}

inline json to_json(const ContinualRun& run) {
  const ForgettingReport rep = forgetting_metrics(run);
  const auto num_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json matrix = json::array();
  for (Eigen::Index i = 0; i < rep.nrmse.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < rep.nrmse.cols(); ++j) row.push_back(num_or_null(rep.nrmse(i, j)));
    matrix.push_back(std::move(row));
  }
  json forgetting = json::array();
  for (double d : rep.forgetting) forgetting.push_back(num_or_null(d));
  json experiences = json::array();
  for (std::size_t i = 0; i < run.experience_ids.size(); ++i)
    experiences.push_back({{"id", run.experience_ids[i]}, {"description", run.descriptions[i]}});
  json steps = json::array();
  for (const auto& s : run.steps) {
    json seen = json::array();
    for (const auto& m : s.seen) seen.push_back(to_json(m));
    steps.push_back({{"experience", s.experience_id},
                     {"accumulator_n", s.accumulator_n},
                     {"readout_fingerprint", fingerprint(s.readout)},
                     {"metrics", std::move(seen)}});
  }
  return json{{"strategy", to_string(run.strategy)},
              {"experiences", std::move(experiences)},
              {"nrmse_matrix", std::move(matrix)},
              {"forgetting", std::move(forgetting)},
              {"steps", std::move(steps)}};
}

}  // namespace fedesn
