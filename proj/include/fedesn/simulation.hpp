#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedesn/error.hpp"
#include "fedesn/federation.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/random.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"
#include "fedesn/tasks.hpp"

namespace fedesn {

struct TaskSpec {
  std::string name = "narma10";  // "narma10" | "delay_recall"
  std::int64_t steps_per_client = 500;
  std::int64_t delay = 5;
  std::uint64_t seed = 1;
};

struct NetworkSpec {
  std::int64_t latency_lo = 0;
  std::int64_t latency_hi = 0;
  double drop_prob = 0.0;
  double dropout_prob = 0.0;
};

struct SimConfig {
  std::int64_t n_clients = 2;
  std::int64_t rounds = 1;
  FederationMode mode = FederationMode::Exact;
  double lambda = 1e-6;
  ReservoirConfig reservoir;
  TaskSpec task;
  PartitionSpec partition;  // n_clients mirrors the top-level field
  NetworkSpec network;
  double quorum_fraction = 1.0;
  std::int64_t deadline_ticks = 100;
  std::uint64_t master_seed = 0;

  void validate() const {
    const auto check = [](bool ok, const std::string& what) {
      require(ok, ErrorCode::InvalidConfig, what);
    };
    reservoir.validate();
    check(n_clients >= 1, "n_clients must be positive");
    check(rounds >= 1, "rounds must be positive");
    check(lambda >= 0.0 && std::isfinite(lambda), "lambda must be nonnegative");
    check(task.name == "narma10" || task.name == "delay_recall", "unknown task '" + task.name + "'");
    check(task.steps_per_client >= 1, "steps_per_client must be positive");
    check(reservoir.input_dim == 1, "synthetic tasks are one-dimensional; reservoir.input_dim must be 1");
    check(network.latency_lo >= 0 && network.latency_lo <= network.latency_hi,
          "latency_ticks must be an ordered nonnegative range");
    check(network.drop_prob >= 0.0 && network.drop_prob < 1.0, "drop_prob must lie in [0, 1)");
    check(network.dropout_prob >= 0.0 && network.dropout_prob <= 1.0,
          "dropout_prob must lie in [0, 1]");
    check(quorum_fraction > 0.0 && quorum_fraction <= 1.0, "quorum_fraction must lie in (0, 1]");
    check(deadline_ticks >= 1, "deadline_ticks must be positive");
    check(partition.gain_lo > 0.0 && partition.gain_lo <= partition.gain_hi,
          "noniid_gain_range must be an ordered positive range");
  }
};

inline json to_json(const SimConfig& c) {
  json task{{"name", c.task.name}, {"steps_per_client", c.task.steps_per_client}, {"seed", c.task.seed}};
  if (c.task.name == "delay_recall") task["delay"] = c.task.delay;
  return json{
      {"n_clients", c.n_clients},
      {"rounds", c.rounds},
      {"mode", to_string(c.mode)},
      {"lambda", c.lambda},
      {"reservoir", to_json(c.reservoir)},
      {"task", std::move(task)},
      {"partition",
       {{"mode", to_string(c.partition.mode)},
        {"seed", c.partition.seed},
        {"noniid_gain_range", {c.partition.gain_lo, c.partition.gain_hi}}}},
      {"network",
       {{"latency_ticks", {c.network.latency_lo, c.network.latency_hi}},
        {"drop_prob", c.network.drop_prob},
        {"dropout_prob", c.network.dropout_prob}}},
      {"quorum_fraction", c.quorum_fraction},
      {"deadline_ticks", c.deadline_ticks},
      {"master_seed", c.master_seed}};
}

/// Parses a SimConfig document. Only `n_clients`, `reservoir` and `task`
/// are mandatory; everything else falls back to the defaults above.
inline SimConfig sim_config_from_json(const json& j) {
  require(j.is_object(), ErrorCode::SchemaError, "simulation config must be an object");
  SimConfig c;
  const auto opt = [&](const json& obj, const char* key, auto& out) {
    if (obj.contains(key)) out = get_field<std::decay_t<decltype(out)>>(obj, key);
  };
  c.n_clients = get_field<std::int64_t>(j, "n_clients");
  opt(j, "rounds", c.rounds);
  if (j.contains("mode")) c.mode = federation_mode_from_string(get_field<std::string>(j, "mode"));
  opt(j, "lambda", c.lambda);
  c.reservoir = reservoir_config_from_json(field(j, "reservoir"));

  const json& task = field(j, "task");
  c.task.name = get_field<std::string>(task, "name");
  c.task.steps_per_client = get_field<std::int64_t>(task, "steps_per_client");
  opt(task, "seed", c.task.seed);
  opt(task, "delay", c.task.delay);

  c.partition.n_clients = c.n_clients;
  if (j.contains("partition")) {
    const json& p = field(j, "partition");
    if (p.contains("mode")) c.partition.mode = partition_mode_from_string(get_field<std::string>(p, "mode"));
    opt(p, "seed", c.partition.seed);
    if (p.contains("noniid_gain_range")) {
      const auto range = get_field<std::vector<double>>(p, "noniid_gain_range");
      require(range.size() == 2, ErrorCode::SchemaError, "noniid_gain_range needs two numbers");
      c.partition.gain_lo = range[0];
      c.partition.gain_hi = range[1];
    }
  }
  if (j.contains("network")) {
    const json& n = field(j, "network");
    if (n.contains("latency_ticks")) {
      const auto range = get_field<std::vector<std::int64_t>>(n, "latency_ticks");
      require(range.size() == 2, ErrorCode::SchemaError, "latency_ticks needs two integers");
      c.network.latency_lo = range[0];
      c.network.latency_hi = range[1];
    }
    opt(n, "drop_prob", c.network.drop_prob);
    opt(n, "dropout_prob", c.network.dropout_prob);
  }
  opt(j, "quorum_fraction", c.quorum_fraction);
  opt(j, "deadline_ticks", c.deadline_ticks);
  opt(j, "master_seed", c.master_seed);
  c.validate();
  return c;
}

inline std::string sim_client_id(std::int64_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "client-%03lld", static_cast<long long>(k));
  return buf;
}

inline LabeledSeries generate_task(const TaskSpec& task, std::int64_t steps, std::uint64_t seed) {
  if (task.name == "narma10") return gen_narma10(steps, seed);
  if (task.name == "delay_recall") return gen_delay_recall(steps, task.delay, seed);
  fail(ErrorCode::InvalidConfig, "unknown task '" + task.name + "'");
}

/// One series of n_clients * steps_per_client steps from task.seed, split
/// into contiguous client shards.
inline std::vector<LabeledSeries> simulation_shards(const SimConfig& cfg) {
  const LabeledSeries full =
      generate_task(cfg.task, cfg.task.steps_per_client * cfg.n_clients, cfg.task.seed);
  PartitionSpec spec = cfg.partition;
  spec.n_clients = cfg.n_clients;
  return partition(full, spec, cfg.reservoir.washout);
}

/// Held-out evaluation series: same task, steps_per_client steps, seed
/// derive_seed(task.seed, 0, "holdout").
inline LabeledSeries simulation_holdout(const SimConfig& cfg) {
  return generate_task(cfg.task, cfg.task.steps_per_client, derive_seed(cfg.task.seed, 0, "holdout"));
}

struct ClientFate {
  bool participates = true;
  std::int64_t latency = 0;
  bool lost = false;
};

/// Per (round, client) draws from Rng(derive_seed(master, round, id)), in
/// order: dropout, latency, loss. All three are always drawn.
inline ClientFate client_fate(const SimConfig& cfg, std::int64_t round, const std::string& id) {
  Rng rng(derive_seed(cfg.master_seed, static_cast<std::uint64_t>(round), id));
  ClientFate f;
  f.participates = !(rng.uniform01() < cfg.network.dropout_prob);
  f.latency = rng.uniform_int(cfg.network.latency_lo, cfg.network.latency_hi);
  f.lost = rng.uniform01() < cfg.network.drop_prob;
  return f;
}

struct RoundRecord {
  std::int64_t round = 0;
  RoundState outcome = RoundState::Idle;
  std::string failure_reason;
  std::vector<std::string> dropped_out;
  std::vector<std::string> lost;
  std::vector<std::string> participants;
  std::vector<Rejection> rejected;
  std::int64_t ticks = 0;
  std::optional<Readout> global;
  std::optional<double> train_mse;
  std::optional<Metrics> holdout;
  std::optional<double> centralized_max_abs_diff;
};

struct SimReport {
  FederationMode mode = FederationMode::Exact;
  std::string reservoir_fingerprint;
  std::vector<RoundRecord> rounds;
  std::optional<Readout> final_readout;
  std::optional<double> exact_vs_centralized_max_abs_diff;
};

namespace detail {

inline Matrix stack_rows(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

}  // namespace detail

/// Runs `rounds` federation rounds on a discrete tick clock. Within a round,
/// messages arriving at tick t are delivered (client order) before the t-th
/// deadline tick; the round closes early once every expected client reported.
inline SimReport run_simulation(const SimConfig& cfg) {
  cfg.validate();
  const Reservoir reservoir(cfg.reservoir);
  const auto shards = simulation_shards(cfg);
  const auto holdout = simulation_holdout(cfg);
  const std::string fp = fingerprint(cfg.reservoir);
  const auto k = static_cast<std::size_t>(cfg.n_clients);

  std::vector<std::string> ids;
  std::vector<Matrix> features;
  std::vector<Matrix> targets;
  std::vector<ClientUpdate> updates;
  for (std::size_t c = 0; c < k; ++c) {
    ids.push_back(sim_client_id(static_cast<std::int64_t>(c)));
    features.push_back(reservoir.run_series(shards[c].input).rows);
    targets.push_back(aligned_targets(shards[c], cfg.reservoir.washout));
    updates.push_back(client_local_update(cfg.reservoir, {shards[c]}, cfg.mode, cfg.lambda, ids[c], 0));
  }
  const Matrix union_h = detail::stack_rows(features);
  const Matrix union_y = detail::stack_rows(targets);

  SimReport report;
  report.mode = cfg.mode;
  report.reservoir_fingerprint = fp;
  for (std::int64_t r = 0; r < cfg.rounds; ++r) {
    RoundRecord rec;
    rec.round = r;
    FederationRound round;
    round.round_id = r;
    round.mode = cfg.mode;
    round.expected_clients = std::set<std::string>(ids.begin(), ids.end());
    round.quorum_fraction = cfg.quorum_fraction;
    round.deadline_ticks = cfg.deadline_ticks;
    round.fingerprint = fp;
    round = round_step(round, event::Open{});

    std::map<std::int64_t, std::vector<std::size_t>> arrivals;
    for (std::size_t c = 0; c < k; ++c) {
      const ClientFate fate = client_fate(cfg, r, ids[c]);
      if (!fate.participates) {
        rec.dropped_out.push_back(ids[c]);
      } else if (fate.lost) {
        rec.lost.push_back(ids[c]);
      } else {
        arrivals[fate.latency].push_back(c);
      }
    }

    for (std::int64_t tick = 0; round.state == RoundState::Collecting; ++tick) {
      if (auto it = arrivals.find(tick); it != arrivals.end()) {
        for (std::size_t c : it->second) {
          ClientUpdate u = updates[c];
          u.round = r;
          round = round_step(round, event::Receive{std::move(u)});
        }
      }
      rec.ticks = tick;
      if (round.all_reported()) {
        round = round_step(round, event::Close{});
      } else {
        round = round_step(round, event::Tick{});
      }
    }

    if (round.state == RoundState::Aggregating) {
      const Readout global = aggregate_round(round, cfg.lambda);
      round = round_step(round, event::Aggregated{global});
      round = round_step(round, event::Broadcast{});
    }

    rec.outcome = round.state;
    rec.failure_reason = round.failure_reason;
    rec.rejected = round.rejections;
    for (const auto& [id, u] : round.received) rec.participants.push_back(id);
    if (round.state == RoundState::Done) {
      const Readout& global = *round.global;
      rec.global = global;
      rec.train_mse = compute_metrics(predict_rows(global, union_h), union_y).mse;
      rec.holdout = evaluate(global, reservoir, holdout);
      if (cfg.mode == FederationMode::Exact) {
        std::vector<Matrix> h_parts;
        std::vector<Matrix> y_parts;
        for (std::size_t c = 0; c < k; ++c)
          if (round.received.count(ids[c]) != 0) {
            h_parts.push_back(features[c]);
            y_parts.push_back(targets[c]);
          }
        const Readout central = solve_readout(
            harvest_stats(detail::stack_rows(h_parts), detail::stack_rows(y_parts)), cfg.lambda);
        rec.centralized_max_abs_diff = (global.w_out - central.w_out).cwiseAbs().maxCoeff();
        report.exact_vs_centralized_max_abs_diff =
            std::max(report.exact_vs_centralized_max_abs_diff.value_or(0.0), *rec.centralized_max_abs_diff);
      }
      report.final_readout = global;
    }
    report.rounds.push_back(std::move(rec));
  }

  require(report.final_readout.has_value(), ErrorCode::AllRoundsFailed,
          "no round reached quorum in " + std::to_string(cfg.rounds) + " attempts");
  return report;
}

inline json to_json(const SimReport& rep) {
  json rounds = json::array();
  for (const auto& r : rep.rounds) {
    json rejected = json::array();
    for (const auto& x : r.rejected) rejected.push_back({{"client_id", x.client_id}, {"reason", x.reason}});
    json entry{{"round", r.round},
               {"outcome", to_string(r.outcome)},
               {"participants", r.participants},
               {"rejected", std::move(rejected)},
               {"dropped_out", r.dropped_out},
               {"lost", r.lost},
               {"ticks", r.ticks}};
    if (!r.failure_reason.empty()) entry["failure_reason"] = r.failure_reason;
    entry["global_fingerprint"] = r.global ? json(fingerprint(*r.global)) : json(nullptr);
    entry["train_mse"] = r.train_mse ? json(*r.train_mse) : json(nullptr);
    entry["holdout"] = r.holdout ? to_json(*r.holdout) : json(nullptr);
    if (rep.mode == FederationMode::Exact)
      entry["centralized_max_abs_diff"] =
          r.centralized_max_abs_diff ? json(*r.centralized_max_abs_diff) : json(nullptr);
    rounds.push_back(std::move(entry));
  }
  json final_block = json::object();
  if (rep.mode == FederationMode::Exact && rep.exact_vs_centralized_max_abs_diff)
    final_block["exact_vs_centralized_max_abs_diff"] = *rep.exact_vs_centralized_max_abs_diff;
  final_block["readout"] = rep.final_readout ? to_json(*rep.final_readout) : json(nullptr);
  return json{{"mode", to_string(rep.mode)},
              {"reservoir_fingerprint", rep.reservoir_fingerprint},
              {"rounds", std::move(rounds)},
              {"final", std::move(final_block)}};
}

}  // namespace fedesn
