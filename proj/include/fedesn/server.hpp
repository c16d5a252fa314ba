#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedesn/error.hpp"
#include "fedesn/federation.hpp"
#include "fedesn/net.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"
#include "fedesn/simulation.hpp"
#include "fedesn/wire.hpp"

namespace fedesn {

/// The part of a SimConfig the live server needs, plus the wall-clock tick.
struct ServeConfig {
  std::int64_t n_clients = 1;
  std::int64_t rounds = 1;
  FederationMode mode = FederationMode::Exact;
  double lambda = 1e-6;
  ReservoirConfig reservoir;
  double quorum_fraction = 1.0;
  std::int64_t deadline_ticks = 100;
  int tick_ms = 50;
};

inline ServeConfig serve_config_from(const SimConfig& sim, int tick_ms) {
  return {sim.n_clients, sim.rounds, sim.mode, sim.lambda, sim.reservoir,
          sim.quorum_fraction, sim.deadline_ticks, tick_ms};
}

struct ServeRound {
  std::int64_t round = 0;
  RoundState outcome = RoundState::Idle;
  std::vector<std::string> participants;
  std::optional<Readout> global;
};

struct ServeResult {
  std::vector<ServeRound> rounds;
  std::optional<Readout> final_readout;
};

/// Federation server speaking the newline-delimited JSON protocol.
///
/// Threads: one acceptor, one reader per connection (decodes frames and
/// answers malformed ones directly), and the owner thread inside run(), which
/// is the only code that touches round state. Readers hand decoded messages
/// to the owner through a queue.
class FederationServer {
 public:
  FederationServer(ServeConfig cfg, const net::Endpoint& bind)
      : cfg_(std::move(cfg)), fingerprint_(fingerprint(cfg_.reservoir)), listener_(net::listen_tcp(bind)) {
    cfg_.reservoir.validate();
    require(cfg_.n_clients >= 1 && cfg_.rounds >= 1, ErrorCode::InvalidConfig,
            "serve needs n_clients >= 1 and rounds >= 1");
    require(cfg_.tick_ms >= 1, ErrorCode::InvalidConfig, "tick_ms must be positive");
  }

  FederationServer(const FederationServer&) = delete;
  FederationServer& operator=(const FederationServer&) = delete;

  ~FederationServer() { teardown(); }

  std::uint16_t port() const { return net::local_port(listener_); }

  /// Runs enrollment and every round. Returns when all rounds are finished or
  /// `stop` is raised; in the latter case the open round is either aggregated
  /// (quorum met) or failed before returning.
  ServeResult run(const std::atomic<bool>& stop) {
    acceptor_ = std::thread([this] { accept_loop(); });
    const auto tick = std::chrono::milliseconds(cfg_.tick_ms);
    auto next_tick = std::chrono::steady_clock::now() + tick;
    while (!finished_) {
      if (stop.load()) {
        if (round_ && round_->state == RoundState::Collecting) {
          while (round_->state == RoundState::Collecting) round_ = round_step(*round_, event::Tick{});
          finish_round();
        }
        break;
      }
      std::optional<Inbound> in;
      {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait_until(lock, next_tick, [this] { return !queue_.empty(); });
        if (!queue_.empty()) {
          in = std::move(queue_.front());
          queue_.pop_front();
        }
      }
      if (in) handle(*in);
      if (std::chrono::steady_clock::now() >= next_tick) {
        next_tick += tick;
        if (round_ && round_->state == RoundState::Collecting) {
          round_ = round_step(*round_, event::Tick{});
          if (round_->state != RoundState::Collecting) finish_round();
        }
      }
    }
    teardown();
    return result_;
  }

 private:
  struct Connection {
    int id = 0;
    net::Socket socket;
    std::mutex write_mu;
    std::thread reader;
    std::string client_id;  // owner thread only
  };

  struct Inbound {
    int conn = 0;
    std::optional<wire::Message> message;  // nullopt: connection closed
  };

  void accept_loop() {
    while (!stopping_.load()) {
      auto sock = net::accept_for(listener_, 50);
      if (!sock) continue;
      auto conn = std::make_shared<Connection>();
      conn->socket = std::move(*sock);
      {
        std::lock_guard lock(conns_mu_);
        conn->id = next_conn_id_++;
        conns_[conn->id] = conn;
      }
      conn->reader = std::thread([this, conn] { read_loop(conn); });
    }
  }

  void read_loop(const std::shared_ptr<Connection>& conn) {
    net::LineReader reader(conn->socket);
    while (auto line = reader.next()) {
      if (line->empty()) continue;
      try {
        push({conn->id, wire::decode_message(*line)});
      } catch (const Error& e) {
        send(*conn, wire::ErrorFrame{0, std::string(to_string(e.code())), e.detail()});
      }
    }
    push({conn->id, std::nullopt});
  }

  void push(Inbound in) {
    {
      std::lock_guard lock(queue_mu_);
      queue_.push_back(std::move(in));
    }
    queue_cv_.notify_one();
  }

  static bool send(Connection& conn, const wire::Message& msg) {
    std::lock_guard lock(conn.write_mu);
    return net::send_all(conn.socket, wire::encode_message(msg));
  }

  std::shared_ptr<Connection> connection(int id) {
    std::lock_guard lock(conns_mu_);
    auto it = conns_.find(id);
    return it == conns_.end() ? nullptr : it->second;
  }

  std::int64_t current_round() const { return static_cast<std::int64_t>(result_.rounds.size()); }

  void handle(const Inbound& in) {
    auto conn = connection(in.conn);
    if (!conn || !in.message) return;
    try {
      dispatch(*conn, *in.message);
    } catch (const Error& e) {
      send(*conn, wire::ErrorFrame{current_round(), std::string(to_string(e.code())), e.detail()});
    }
  }

  void dispatch(Connection& conn, const wire::Message& message) {
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, wire::Enroll>) {
            on_enroll(conn, m);
          } else if constexpr (std::is_same_v<M, wire::Update>) {
            on_update(conn, m);
          } else if constexpr (std::is_same_v<M, wire::Unsupported>) {
            send(conn, wire::ErrorFrame{m.round, "Unsupported", "unknown message type '" + m.type + "'"});
          } else {
            send(conn, wire::ErrorFrame{m.round, "UnexpectedMessage",
                                         "servers do not accept '" + wire::type_name(m) + "' frames"});
          }
        },
        message);
  }

  void on_enroll(Connection& conn, const wire::Enroll& m) {
    require(!m.client_id.empty(), ErrorCode::MalformedFrame, "empty client_id");
    conn.client_id = m.client_id;
    enrolled_[m.client_id] = conn.id;
    send(conn, wire::EnrollAck{current_round(), cfg_.reservoir, cfg_.mode, cfg_.lambda, cfg_.reservoir.washout});
    if (!round_ && static_cast<std::int64_t>(enrolled_.size()) >= cfg_.n_clients) open_round(0);
  }

  void on_update(Connection& conn, const wire::Update& m) {
    if (conn.client_id.empty() || conn.client_id != m.client_id) {
      send(conn, wire::UpdateAck{m.round, false, "client_id does not match enrollment"});
      return;
    }
    if (!round_ || m.round > current_round()) {
      pending_[m.round][m.client_id] = m;
      return;
    }
    if (m.round < current_round() || round_->state != RoundState::Collecting) {
      send(conn, wire::UpdateAck{m.round, false, "round closed"});
      return;
    }
    receive(conn, m);
  }

  void receive(Connection& conn, const wire::Update& m) {
    const auto before = round_->rejections.size();
    round_ = round_step(*round_, event::Receive{wire::to_client_update(m)});
    if (round_->rejections.size() > before) {
      send(conn, wire::UpdateAck{m.round, false, round_->rejections.back().reason});
    } else {
      send(conn, wire::UpdateAck{m.round, true, ""});
    }
    if (round_->state == RoundState::Collecting && round_->all_reported()) {
      round_ = round_step(*round_, event::Close{});
      finish_round();
    }
  }

  void open_round(std::int64_t r) {
    FederationRound round;
    round.round_id = r;
    round.mode = cfg_.mode;
    for (const auto& [id, conn] : enrolled_) round.expected_clients.insert(id);
    round.quorum_fraction = cfg_.quorum_fraction;
    round.deadline_ticks = cfg_.deadline_ticks;
    round.fingerprint = fingerprint_;
    round_ = round_step(round, event::Open{});

    auto pending = std::move(pending_[r]);
    pending_.erase(r);
    for (const auto& [id, update] : pending) {
      if (round_->round_id != r || round_->state != RoundState::Collecting) break;
      auto it = enrolled_.find(id);
      auto conn = it == enrolled_.end() ? nullptr : connection(it->second);
      if (conn) receive(*conn, update);
    }
  }

  void finish_round() {
    if (round_->state == RoundState::Aggregating) {
      try {
        round_ = round_step(*round_, event::Aggregated{aggregate_round(*round_, cfg_.lambda)});
      } catch (const Error& e) {
        round_ = round_step(*round_, event::Fail{e.what()});
      }
    }
    ServeRound rec;
    rec.round = round_->round_id;
    for (const auto& [id, u] : round_->received) rec.participants.push_back(id);
    if (round_->state == RoundState::Broadcasting) {
      const wire::GlobalModel msg{round_->round_id, *round_->global};
      for_each_expected([&](Connection& c) { send(c, msg); });
      round_ = round_step(*round_, event::Broadcast{});
      rec.global = round_->global;
      result_.final_readout = round_->global;
    } else {
      const wire::ErrorFrame msg{round_->round_id, "RoundFailed", round_->failure_reason};
      for_each_expected([&](Connection& c) { send(c, msg); });
    }
    rec.outcome = round_->state;
    result_.rounds.push_back(std::move(rec));
    if (current_round() < cfg_.rounds) {
      open_round(current_round());
    } else {
      finished_ = true;
    }
  }

  template <typename F>
  void for_each_expected(F&& f) {
    for (const auto& id : round_->expected_clients) {
      auto it = enrolled_.find(id);
      if (it == enrolled_.end()) continue;
      if (auto conn = connection(it->second)) f(*conn);
    }
  }

  void teardown() {
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::map<int, std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(conns_mu_);
      conns.swap(conns_);
    }
    for (auto& [id, c] : conns) c->socket.shutdown();
    for (auto& [id, c] : conns)
      if (c->reader.joinable()) c->reader.join();
  }

  ServeConfig cfg_;
  std::string fingerprint_;
  net::Socket listener_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};

  std::mutex conns_mu_;
  std::map<int, std::shared_ptr<Connection>> conns_;
  int next_conn_id_ = 0;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Inbound> queue_;

  // Owner-thread state.
  std::map<std::string, int> enrolled_;
  std::map<std::int64_t, std::map<std::string, wire::Update>> pending_;
  std::optional<FederationRound> round_;
  ServeResult result_;
  bool finished_ = false;
};

struct ClientResult {
  ReservoirConfig reservoir_config;
  std::optional<Readout> global;
  std::int64_t rounds_completed = 0;
};

/// Enrolls, then answers every round with the statistics of `local_data`
/// until the server closes the connection. Returns the last global model.
inline ClientResult run_client(const net::Endpoint& server, const std::string& client_id,
                               const std::vector<LabeledSeries>& local_data, std::ostream* log = nullptr) {
  net::Socket sock = net::connect_tcp(server);
  net::LineReader reader(sock);
  require(net::send_all(sock, wire::encode_message(wire::Enroll{0, client_id})), ErrorCode::IoError,
          "server closed the connection during enrollment");

  std::optional<wire::EnrollAck> ack;
  while (!ack) {
    auto line = reader.next();
    require(line.has_value(), ErrorCode::IoError, "server closed the connection during enrollment");
    const wire::Message msg = wire::decode_message(*line);
    if (const auto* a = std::get_if<wire::EnrollAck>(&msg)) ack = *a;
    if (const auto* e = std::get_if<wire::ErrorFrame>(&msg))
      fail(ErrorCode::IoError, "enrollment refused: " + e->code + ": " + e->detail);
  }
  require(ack->washout == ack->reservoir_config.washout, ErrorCode::MalformedFrame,
          "enroll_ack washout disagrees with its reservoir config");

  ClientResult result;
  result.reservoir_config = ack->reservoir_config;
  ClientUpdate update =
      client_local_update(ack->reservoir_config, local_data, ack->mode, ack->lambda, client_id, ack->round);
  const auto submit = [&](std::int64_t r) {
    update.round = r;
    return net::send_all(sock, wire::encode_message(wire::to_message(update)));
  };

  std::int64_t round = ack->round;
  bool open = submit(round);
  while (open) {
    auto line = reader.next();
    if (!line) break;
    const wire::Message msg = wire::decode_message(*line);
    if (const auto* g = std::get_if<wire::GlobalModel>(&msg)) {
      result.global = g->readout;
      ++result.rounds_completed;
      round = g->round + 1;
      open = submit(round);
    } else if (const auto* e = std::get_if<wire::ErrorFrame>(&msg)) {
      if (log) *log << "server error (round " << e->round << "): " << e->code << ": " << e->detail << "\n";
      if (e->code == "RoundFailed" && e->round >= round) {
        round = e->round + 1;
        open = submit(round);
      }
    } else if (const auto* a = std::get_if<wire::UpdateAck>(&msg)) {
      if (!a->accepted && log) *log << "update for round " << a->round << " rejected: " << a->reason << "\n";
    }
  }
  require(result.rounds_completed > 0, ErrorCode::IoError, "server closed before any global model");
  return result;
}

}  // namespace fedesn
