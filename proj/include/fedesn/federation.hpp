#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "fedesn/error.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"
#include "fedesn/time_series.hpp"

namespace fedesn {

enum class FederationMode { Exact, Average };

inline std::string to_string(FederationMode m) { return m == FederationMode::Exact ? "exact" : "average"; }

inline FederationMode federation_mode_from_string(const std::string& s) {
  if (s == "exact") return FederationMode::Exact;
  if (s == "average") return FederationMode::Average;
  fail(ErrorCode::SchemaError, "unknown federation mode '" + s + "'");
}

/// Averaging-mode payload: a locally solved readout plus its sample count.
struct AveragePayload {
  Readout readout;
  std::int64_t n = 0;
};

using UpdatePayload = std::variant<ReadoutStats, AveragePayload>;

struct ClientUpdate {
  std::string client_id;
  std::int64_t round = 0;
  UpdatePayload payload;
  std::string fingerprint;

  FederationMode mode() const {
    return std::holds_alternative<ReadoutStats>(payload) ? FederationMode::Exact
                                                         : FederationMode::Average;
  }
};

inline bool operator==(const ReadoutStats& x, const ReadoutStats& y) {
  const auto same = [](const Matrix& p, const Matrix& q) {
    return p.rows() == q.rows() && p.cols() == q.cols() && p == q;
  };
  return x.n == y.n && same(x.a, y.a) && same(x.b, y.b) && same(x.a_lo, y.a_lo) &&
         same(x.b_lo, y.b_lo);
}

inline bool operator==(const Readout& x, const Readout& y) {
  return x.lambda == y.lambda && x.trained_on == y.trained_on && x.w_out.rows() == y.w_out.rows() &&
         x.w_out.cols() == y.w_out.cols() && x.w_out == y.w_out;
}

inline bool operator==(const AveragePayload& x, const AveragePayload& y) {
  return x.n == y.n && x.readout == y.readout;
}

inline bool operator==(const ClientUpdate& x, const ClientUpdate& y) {
  return x.client_id == y.client_id && x.round == y.round && x.fingerprint == y.fingerprint &&
         x.payload == y.payload;
}

/// Builds the shared reservoir from its config, harvests every usable local
/// series and merges the statistics. Only statistics (or a locally solved
/// readout) leave this function; the series themselves never do.
inline ClientUpdate client_local_update(const ReservoirConfig& config,
                                        const std::vector<LabeledSeries>& local_series,
                                        FederationMode mode, double lambda,
                                        const std::string& client_id, std::int64_t round) {
  const Reservoir reservoir(config);
  std::optional<ReadoutStats> stats;
  for (const auto& series : local_series) {
    if (series.length() <= config.washout) continue;
    ReadoutStats s = harvest_series(reservoir, series);
    stats = stats ? merge_stats(*stats, s) : std::move(s);
  }
  require(stats.has_value(), ErrorCode::SeriesTooShort,
          "client '" + client_id + "' has no series longer than the washout");

  ClientUpdate update;
  update.client_id = client_id;
  update.round = round;
  update.fingerprint = fingerprint(config);
  if (mode == FederationMode::Exact) {
    update.payload = std::move(*stats);
  } else {
    update.payload = AveragePayload{solve_readout(*stats, lambda), stats->n};
  }
  return update;
}

namespace detail {

inline std::vector<const ClientUpdate*> sorted_by_client(const std::vector<ClientUpdate>& updates) {
  std::vector<const ClientUpdate*> out;
  for (const auto& u : updates) out.push_back(&u);
  std::stable_sort(out.begin(), out.end(),
                   [](const ClientUpdate* x, const ClientUpdate* y) { return x->client_id < y->client_id; });
  return out;
}

}  // namespace detail

/// Sums every client's statistics (in client_id order, so arrival order is
/// irrelevant) and solves once with the server-side lambda.
inline Readout server_aggregate_exact(const std::vector<ClientUpdate>& updates, double lambda) {
  require(!updates.empty(), ErrorCode::EmptyRound, "no updates to aggregate");
  const std::string& fp = updates.front().fingerprint;
  std::optional<ReadoutStats> merged;
  for (const ClientUpdate* u : detail::sorted_by_client(updates)) {
    require(u->fingerprint == fp, ErrorCode::FingerprintMismatch,
            "client '" + u->client_id + "' used a different reservoir");
    const auto* stats = std::get_if<ReadoutStats>(&u->payload);
    require(stats != nullptr, ErrorCode::ShapeMismatch,
            "client '" + u->client_id + "' sent a readout in exact mode");
    merged = merged ? merge_stats(*merged, *stats) : *stats;
  }
  return solve_readout(*merged, lambda);
}

/// Sample-count-weighted mean of local readouts.
inline Readout server_aggregate_average(const std::vector<ClientUpdate>& updates) {
  require(!updates.empty(), ErrorCode::EmptyRound, "no updates to aggregate");
  const auto ordered = detail::sorted_by_client(updates);
  std::int64_t total = 0;
  const AveragePayload* first = nullptr;
  for (const ClientUpdate* u : ordered) {
    const auto* p = std::get_if<AveragePayload>(&u->payload);
    require(p != nullptr, ErrorCode::ShapeMismatch,
            "client '" + u->client_id + "' sent statistics in average mode");
    if (first == nullptr) first = p;
    require(p->readout.w_out.rows() == first->readout.w_out.rows() &&
                p->readout.w_out.cols() == first->readout.w_out.cols(),
            ErrorCode::ShapeMismatch, "readout shapes differ across clients");
    require(p->n > 0, ErrorCode::ShapeMismatch, "client '" + u->client_id + "' reported n = 0");
    total += p->n;
  }
  Readout global;
  global.w_out = Matrix::Zero(first->readout.w_out.rows(), first->readout.w_out.cols());
  for (const ClientUpdate* u : ordered) {
    const auto& p = std::get<AveragePayload>(u->payload);
    global.w_out += (static_cast<double>(p.n) / static_cast<double>(total)) * p.readout.w_out;
  }
  global.lambda = first->readout.lambda;
  global.trained_on = total;
  return global;
}

// --- round state machine ---------------------------------------------------

enum class RoundState { Idle, Collecting, Aggregating, Broadcasting, Done, Failed };

inline std::string to_string(RoundState s) {
  switch (s) {
    case RoundState::Idle: return "idle";
    case RoundState::Collecting: return "collecting";
    case RoundState::Aggregating: return "aggregating";
    case RoundState::Broadcasting: return "broadcasting";
    case RoundState::Done: return "done";
    case RoundState::Failed: return "failed";
  }
  return "unknown";
}

struct Rejection {
  std::string client_id;
  std::string reason;
};

struct FederationRound {
  std::int64_t round_id = 0;
  FederationMode mode = FederationMode::Exact;
  RoundState state = RoundState::Idle;
  std::set<std::string> expected_clients;
  std::map<std::string, ClientUpdate> received;
  double quorum_fraction = 1.0;
  std::int64_t deadline_ticks = 100;
  std::string fingerprint;  // the server's reservoir fingerprint
  std::vector<Rejection> rejections;
  std::optional<Readout> global;
  std::string failure_reason;

  std::size_t required_updates() const {
    const double need = quorum_fraction * static_cast<double>(expected_clients.size());
    return static_cast<std::size_t>(std::ceil(need - 1e-9));
  }
  bool quorum_met() const { return received.size() >= std::max<std::size_t>(1, required_updates()); }
  bool all_reported() const { return received.size() == expected_clients.size(); }
};

namespace event {
struct Open {};
struct Receive {
  ClientUpdate update;
};
struct Tick {};
struct Close {};
/// The owner finished aggregating; carries the new global readout.
struct Aggregated {
  Readout readout;
};
struct Broadcast {};
struct Fail {
  std::string reason;
};
}  // namespace event

using RoundEvent = std::variant<event::Open, event::Receive, event::Tick, event::Close,
                                event::Aggregated, event::Broadcast, event::Fail>;

namespace detail {

[[noreturn]] inline void illegal(const FederationRound& r, const char* event) {
  fail(ErrorCode::IllegalTransition,
       std::string("event '") + event + "' is not legal in state '" + to_string(r.state) + "'");
}

inline std::optional<std::string> rejection_reason(const FederationRound& r, const ClientUpdate& u) {
  if (r.expected_clients.count(u.client_id) == 0) return "unexpected client";
  if (u.round != r.round_id) return "wrong round";
  if (u.fingerprint != r.fingerprint) return "fingerprint mismatch";
  if (u.mode() != r.mode) return "payload kind does not match round mode";
  return std::nullopt;
}

}  // namespace detail

/// Pure transition function. Legal path:
///   Idle -Open-> Collecting -(Close | Tick at deadline with quorum)-> Aggregating
///   -Aggregated-> Broadcasting -Broadcast-> Done; Fail from any state.
inline FederationRound round_step(const FederationRound& round, const RoundEvent& ev) {
  FederationRound next = round;
  std::visit(
      [&](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, event::Open>) {
          if (round.state != RoundState::Idle) detail::illegal(round, "open");
          require(!round.expected_clients.empty(), ErrorCode::InvalidConfig,
                  "round has no expected clients");
          require(round.quorum_fraction > 0.0 && round.quorum_fraction <= 1.0,
                  ErrorCode::InvalidConfig, "quorum_fraction must lie in (0, 1]");
          require(round.deadline_ticks >= 1, ErrorCode::InvalidConfig, "deadline must be >= 1 tick");
          next.state = RoundState::Collecting;
        } else if constexpr (std::is_same_v<E, event::Receive>) {
          if (round.state != RoundState::Collecting) detail::illegal(round, "receive");
          if (auto reason = detail::rejection_reason(round, e.update)) {
            next.rejections.push_back({e.update.client_id, *reason});
          } else {
            next.received.insert_or_assign(e.update.client_id, e.update);
          }
        } else if constexpr (std::is_same_v<E, event::Tick>) {
          if (round.state != RoundState::Collecting) detail::illegal(round, "tick");
          next.deadline_ticks = round.deadline_ticks - 1;
          if (next.deadline_ticks <= 0) {
            if (next.quorum_met()) {
              next.state = RoundState::Aggregating;
            } else {
              next.state = RoundState::Failed;
              next.failure_reason = "quorum not met at deadline";
            }
          }
        } else if constexpr (std::is_same_v<E, event::Close>) {
          if (round.state != RoundState::Collecting || !round.all_reported())
            detail::illegal(round, "close");
          next.state = RoundState::Aggregating;
        } else if constexpr (std::is_same_v<E, event::Aggregated>) {
          if (round.state != RoundState::Aggregating) detail::illegal(round, "aggregated");
          next.global = e.readout;
          next.state = RoundState::Broadcasting;
        } else if constexpr (std::is_same_v<E, event::Broadcast>) {
          if (round.state != RoundState::Broadcasting) detail::illegal(round, "broadcast");
          next.state = RoundState::Done;
        } else if constexpr (std::is_same_v<E, event::Fail>) {
          next.state = RoundState::Failed;
          next.failure_reason = e.reason;
        }
      },
      ev);
  return next;
}

inline std::vector<ClientUpdate> received_updates(const FederationRound& round) {
  std::vector<ClientUpdate> out;
  for (const auto& [id, u] : round.received) out.push_back(u);
  return out;
}

/// Aggregates the received updates per the round's mode. Only legal in the
/// Aggregating state, which is reachable only with quorum.
inline Readout aggregate_round(const FederationRound& round, double lambda) {
  if (round.state != RoundState::Aggregating) detail::illegal(round, "aggregate");
  const auto updates = received_updates(round);
  return round.mode == FederationMode::Exact ? server_aggregate_exact(updates, lambda)
                                             : server_aggregate_average(updates);
}

}  // namespace fedesn
