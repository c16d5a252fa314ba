#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedesn/error.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/random.hpp"
#include "fedesn/time_series.hpp"

namespace fedesn {

inline constexpr double kNarmaDivergence = 1e3;

/// NARMA10 targets for a given input sequence, zero history before step 1:
///   y(t) = 0.3 y(t-1) + 0.05 y(t-1) sum_{i=0..9} y(t-1-i) + 1.5 u(t-10) u(t-1) + 0.1
/// Row t-1 of the result holds y(t), so the state after seeing u(t) predicts
/// an output that depends on inputs up to u(t-1).
inline Matrix narma10_targets(const Vector& u) {
  const Eigen::Index steps = u.size();
  std::vector<double> y(static_cast<std::size_t>(steps) + 1, 0.0);  // y[0] is history
  const auto y_at = [&](Eigen::Index t) { return t >= 0 ? y[static_cast<std::size_t>(t)] : 0.0; };
  const auto u_at = [&](Eigen::Index t) { return t >= 1 ? u(t - 1) : 0.0; };
  Matrix target(steps, 1);
  for (Eigen::Index t = 1; t <= steps; ++t) {
    double window = 0.0;
    for (Eigen::Index i = 0; i < 10; ++i) window += y_at(t - 1 - i);
    const double prev = y_at(t - 1);
    const double next = 0.3 * prev + 0.05 * prev * window + 1.5 * u_at(t - 10) * u_at(t - 1) + 0.1;
    if (!std::isfinite(next) || std::abs(next) > kNarmaDivergence)
      fail(ErrorCode::Diverged, "NARMA10 recurrence diverged at step " + std::to_string(t));
    y[static_cast<std::size_t>(t)] = next;
    target(t - 1, 0) = next;
  }
  return target;
}

/// Input i.i.d. uniform [0, 0.5] from Rng(seed).
inline LabeledSeries gen_narma10(std::int64_t steps, std::uint64_t seed) {
  require(steps >= 20, ErrorCode::SeriesTooShort, "NARMA10 needs at least 20 steps");
  Rng rng(seed);
  Vector u(steps);
  for (Eigen::Index t = 0; t < steps; ++t) u(t) = rng.uniform(0.0, 0.5);
  Matrix target = narma10_targets(u);
  return LabeledSeries(TimeSeries(Matrix(u)), std::move(target));
}

/// Input i.i.d. uniform [-1, 1]; target y(t) = u(t - delay), zero for t <= delay.
inline LabeledSeries gen_delay_recall(std::int64_t steps, std::int64_t delay, std::uint64_t seed) {
  require(delay >= 1 && steps > delay, ErrorCode::InvalidDelay,
          "delay recall needs steps > delay >= 1");
  Rng rng(seed);
  Matrix u(steps, 1);
  for (Eigen::Index t = 0; t < steps; ++t) u(t, 0) = rng.uniform(-1.0, 1.0);
  Matrix target = Matrix::Zero(steps, 1);
  for (Eigen::Index t = delay; t < steps; ++t) target(t, 0) = u(t - delay, 0);
  return LabeledSeries(TimeSeries(std::move(u)), std::move(target));
}

// --- CSV ---------------------------------------------------------------

inline void write_csv(std::ostream& out, const LabeledSeries& s) {
  const Matrix& u = s.input.values();
  out << 't';
  for (Eigen::Index j = 0; j < u.cols(); ++j) out << ",u_" << (j + 1);
  for (Eigen::Index j = 0; j < s.target.cols(); ++j) out << ",y_" << (j + 1);
  out << '\n';
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    out << (t + 1);
    for (Eigen::Index j = 0; j < u.cols(); ++j) out << ',' << format_double(u(t, j));
    for (Eigen::Index j = 0; j < s.target.cols(); ++j) out << ',' << format_double(s.target(t, j));
    out << '\n';
  }
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline double parse_number(std::string_view cell, std::size_t line) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || cell.empty())
    fail(ErrorCode::ParseError, at_line(line) + "not a number: '" + std::string(cell) + "'");
  if (!std::isfinite(value))
    fail(ErrorCode::NonFinite, at_line(line) + "non-finite value '" + std::string(cell) + "'");
  return value;
}

}  // namespace detail

/// Header `t,u_1..u_Nu,y_1..y_Ny`, then one row per step with t counting from 1.
inline LabeledSeries read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, detail::at_line(1) + "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  require(!header.empty() && header[0] == "t", ErrorCode::ParseError,
          detail::at_line(1) + "header must start with 't'");
  std::size_t n_u = 0;
  std::size_t n_y = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string expected_u = "u_" + std::to_string(n_u + 1);
    const std::string expected_y = "y_" + std::to_string(n_y + 1);
    if (n_y == 0 && header[i] == expected_u) {
      ++n_u;
    } else if (header[i] == expected_y) {
      ++n_y;
    } else {
      fail(ErrorCode::ParseError,
           detail::at_line(1) + "unexpected header column '" + std::string(header[i]) + "'");
    }
  }
  require(n_u >= 1 && n_y >= 1, ErrorCode::ParseError,
          detail::at_line(1) + "need at least one u_ and one y_ column");

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    require(cells.size() == header.size(), ErrorCode::RaggedRows,
            detail::at_line(line_no) + "expected " + std::to_string(header.size()) +
                " columns, found " + std::to_string(cells.size()));
    const double t = detail::parse_number(cells[0], line_no);
    require(t == static_cast<double>(rows + 1), ErrorCode::ParseError,
            detail::at_line(line_no) + "step index out of sequence");
    for (std::size_t i = 1; i < cells.size(); ++i)
      values.push_back(detail::parse_number(cells[i], line_no));
    ++rows;
  }
  require(rows >= 1, ErrorCode::ParseError, detail::at_line(line_no) + "no data rows");

  const auto width = n_u + n_y;
  Matrix u(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n_u));
  Matrix y(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n_y));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n_u; ++j)
      u(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = values[r * width + j];
    for (std::size_t j = 0; j < n_y; ++j)
      y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = values[r * width + n_u + j];
  }
  return LabeledSeries(TimeSeries(std::move(u)), std::move(y));
}

inline void save_csv(const LabeledSeries& series, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::IoError, "cannot open '" + path + "' for writing");
  write_csv(out, series);
  require(out.good(), ErrorCode::IoError, "failed writing '" + path + "'");
}

inline LabeledSeries load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
  return read_csv(in);
}

// --- partitioning --------------------------------------------------------

enum class PartitionMode { IID, NonIID };

struct PartitionSpec {
  std::int64_t n_clients = 1;
  PartitionMode mode = PartitionMode::IID;
  std::uint64_t seed = 0;
  double gain_lo = 0.5;
  double gain_hi = 2.0;
};

/// Per-client input gains: one Rng(spec.seed) draw per client in order.
/// IID partitions use unit gain.
inline std::vector<double> partition_gains(const PartitionSpec& spec) {
  std::vector<double> gains(static_cast<std::size_t>(spec.n_clients), 1.0);
  if (spec.mode == PartitionMode::NonIID) {
    Rng rng(spec.seed);
    for (auto& g : gains) g = rng.uniform(spec.gain_lo, spec.gain_hi);
  }
  return gains;
}

/// K contiguous shards whose lengths differ by at most one step (the first
/// T mod K shards get the extra step).
inline std::vector<LabeledSeries> partition(const LabeledSeries& series, const PartitionSpec& spec,
                                            std::int64_t washout) {
  const std::int64_t k = spec.n_clients;
  require(k >= 1, ErrorCode::InvalidConfig, "n_clients must be positive");
  require(spec.gain_lo <= spec.gain_hi, ErrorCode::InvalidConfig, "gain range must be ordered");
  require(series.length() >= k * (washout + 10), ErrorCode::TooManyClients,
          "series of " + std::to_string(series.length()) + " steps cannot feed " +
              std::to_string(k) + " clients");
  const auto gains = partition_gains(spec);
  const std::int64_t base = series.length() / k;
  const std::int64_t extra = series.length() % k;
  std::vector<LabeledSeries> shards;
  std::int64_t start = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    const std::int64_t len = base + (c < extra ? 1 : 0);
    Matrix u = series.input.values().middleRows(start, len);
    if (spec.mode == PartitionMode::NonIID) u *= gains[static_cast<std::size_t>(c)];
    shards.emplace_back(TimeSeries(std::move(u)), series.target.middleRows(start, len));
    start += len;
  }
  return shards;
}

inline std::string to_string(PartitionMode m) { return m == PartitionMode::IID ? "iid" : "noniid"; }

inline PartitionMode partition_mode_from_string(const std::string& s) {
  if (s == "iid") return PartitionMode::IID;
  if (s == "noniid") return PartitionMode::NonIID;
  fail(ErrorCode::SchemaError, "unknown partition mode '" + s + "'");
}

}  // namespace fedesn
