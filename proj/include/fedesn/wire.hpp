#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

#include "fedesn/error.hpp"
#include "fedesn/federation.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"

namespace fedesn::wire {

inline constexpr int kProtocolVersion = 1;

struct Enroll {
  std::int64_t round = 0;
  std::string client_id;
  friend bool operator==(const Enroll&, const Enroll&) = default;
};

struct EnrollAck {
  std::int64_t round = 0;
  ReservoirConfig reservoir_config;
  FederationMode mode = FederationMode::Exact;
  double lambda = 0.0;
  std::int64_t washout = 0;
  friend bool operator==(const EnrollAck&, const EnrollAck&) = default;
};

struct Update {
  std::int64_t round = 0;
  std::string client_id;
  std::string fingerprint;
  UpdatePayload payload;
  friend bool operator==(const Update& x, const Update& y) {
    return x.round == y.round && x.client_id == y.client_id && x.fingerprint == y.fingerprint &&
           x.payload == y.payload;
  }
};

struct UpdateAck {
  std::int64_t round = 0;
  bool accepted = false;
  std::string reason;
  friend bool operator==(const UpdateAck&, const UpdateAck&) = default;
};

struct GlobalModel {
  std::int64_t round = 0;
  Readout readout;
  friend bool operator==(const GlobalModel& x, const GlobalModel& y) {
    return x.round == y.round && x.readout == y.readout;
  }
};

struct ErrorFrame {
  std::int64_t round = 0;
  std::string code;
  std::string detail;
  friend bool operator==(const ErrorFrame&, const ErrorFrame&) = default;
};

/// A well-formed frame whose `type` this build does not know.
struct Unsupported {
  std::int64_t round = 0;
  std::string type;
  friend bool operator==(const Unsupported&, const Unsupported&) = default;
};

using Message = std::variant<Enroll, EnrollAck, Update, UpdateAck, GlobalModel, ErrorFrame, Unsupported>;

inline Update to_message(const ClientUpdate& u) { return {u.round, u.client_id, u.fingerprint, u.payload}; }

inline ClientUpdate to_client_update(const Update& m) {
  return {m.client_id, m.round, m.payload, m.fingerprint};
}

inline json payload_to_json(const UpdatePayload& p) {
  if (const auto* stats = std::get_if<ReadoutStats>(&p))
    return json{{"kind", "stats"}, {"stats", to_json(*stats)}};
  const auto& avg = std::get<AveragePayload>(p);
  return json{{"kind", "readout"}, {"readout", to_json(avg.readout)}, {"n", avg.n}};
}

inline UpdatePayload payload_from_json(const json& j) {
  const auto kind = get_field<std::string>(j, "kind");
  if (kind == "stats") return readout_stats_from_json(field(j, "stats"));
  if (kind == "readout")
    return AveragePayload{readout_from_json(field(j, "readout")), get_field<std::int64_t>(j, "n")};
  fail(ErrorCode::SchemaError, "unknown payload kind '" + kind + "'");
}

inline json to_json(const Message& msg) {
  return std::visit(
      [](const auto& m) -> json {
        using M = std::decay_t<decltype(m)>;
        json j{{"v", kProtocolVersion}, {"round", m.round}};
        if constexpr (std::is_same_v<M, Enroll>) {
          j["type"] = "enroll";
          j["client_id"] = m.client_id;
        } else if constexpr (std::is_same_v<M, EnrollAck>) {
          j["type"] = "enroll_ack";
          j["reservoir_config"] = fedesn::to_json(m.reservoir_config);
          j["mode"] = to_string(m.mode);
          j["lambda"] = m.lambda;
          j["washout"] = m.washout;
        } else if constexpr (std::is_same_v<M, Update>) {
          j["type"] = "update";
          j["client_id"] = m.client_id;
          j["fingerprint"] = m.fingerprint;
          j["payload"] = payload_to_json(m.payload);
        } else if constexpr (std::is_same_v<M, UpdateAck>) {
          j["type"] = "update_ack";
          j["accepted"] = m.accepted;
          j["reason"] = m.reason;
        } else if constexpr (std::is_same_v<M, GlobalModel>) {
          j["type"] = "global_model";
          j["readout"] = fedesn::to_json(m.readout);
        } else if constexpr (std::is_same_v<M, ErrorFrame>) {
          j["type"] = "error";
          j["code"] = m.code;
          j["detail"] = m.detail;
        } else {
          j["type"] = m.type;
        }
        return j;
      },
      msg);
}

/// One compact JSON object terminated by '\n'. String escaping guarantees the
/// body itself never contains a raw newline.
inline std::string encode_message(const Message& msg) {
  std::string line = dump_json(to_json(msg));
  line += '\n';
  return line;
}

inline Message decode_message(std::string_view frame) {
  if (!frame.empty() && frame.back() == '\n') frame.remove_suffix(1);
  if (!frame.empty() && frame.back() == '\r') frame.remove_suffix(1);
  json j = json::parse(frame.begin(), frame.end(), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::MalformedFrame, "frame is not valid JSON");
  if (!j.is_object()) fail(ErrorCode::MalformedFrame, "frame is not a JSON object");
  const auto v = j.find("v");
  if (v == j.end() || !v->is_number_integer()) fail(ErrorCode::MalformedFrame, "missing integer 'v'");
  if (v->get<std::int64_t>() != kProtocolVersion)
    fail(ErrorCode::VersionMismatch, "unsupported protocol version " + v->dump());
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) fail(ErrorCode::MalformedFrame, "missing string 'type'");
  const auto round_it = j.find("round");
  if (round_it == j.end() || !round_it->is_number_integer())
    fail(ErrorCode::MalformedFrame, "missing integer 'round'");
  const auto round = round_it->get<std::int64_t>();
  const auto& t = type->get_ref<const std::string&>();

  const auto str = [&](const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string())
      fail(ErrorCode::MalformedFrame, std::string("missing string '") + key + "'");
    return it->get<std::string>();
  };

  try {
    if (t == "enroll") return Enroll{round, str("client_id")};
    if (t == "enroll_ack") {
      return EnrollAck{round, reservoir_config_from_json(field(j, "reservoir_config")),
                       federation_mode_from_string(str("mode")), get_field<double>(j, "lambda"),
                       get_field<std::int64_t>(j, "washout")};
    }
    if (t == "update")
      return Update{round, str("client_id"), str("fingerprint"), payload_from_json(field(j, "payload"))};
    if (t == "update_ack") {
      const auto it = j.find("accepted");
      if (it == j.end() || !it->is_boolean()) fail(ErrorCode::MalformedFrame, "missing bool 'accepted'");
      return UpdateAck{round, it->get<bool>(), str("reason")};
    }
    if (t == "global_model") return GlobalModel{round, readout_from_json(field(j, "readout"))};
    if (t == "error") return ErrorFrame{round, str("code"), str("detail")};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedFrame) throw;
    fail(ErrorCode::MalformedFrame, e.detail());
  }
  return Unsupported{round, t};
}

inline std::string type_name(const Message& m) {
  static constexpr const char* names[] = {"enroll", "enroll_ack", "update", "update_ack",
                                          "global_model", "error", "unsupported"};
  return names[m.index()];
}

}  // namespace fedesn::wire
