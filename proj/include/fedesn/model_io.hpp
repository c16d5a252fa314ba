#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "fedesn/error.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"

namespace fedesn {

inline constexpr int kModelFormatVersion = 1;

struct Model {
  Readout readout;
  ReservoirConfig reservoir_config;
};

inline json model_to_json(const Readout& readout, const ReservoirConfig& config) {
  return json{{"version", kModelFormatVersion},
              {"reservoir_config", to_json(config)},
              {"readout", to_json(readout)}};
}

inline Model model_from_json(const json& j) {
  require(j.is_object(), ErrorCode::SchemaError, "model file must hold a JSON object");
  static const std::set<std::string> known{"version", "reservoir_config", "readout"};
  for (auto it = j.begin(); it != j.end(); ++it)
    require(known.count(it.key()) == 1, ErrorCode::SchemaError,
            "unexpected model field '" + it.key() + "'");
  const auto version = get_field<std::int64_t>(j, "version");
  require(version == kModelFormatVersion, ErrorCode::VersionMismatch,
          "model format version " + std::to_string(version) + " is not supported");
  Model m;
  m.reservoir_config = reservoir_config_from_json(field(j, "reservoir_config"));
  m.readout = readout_from_json(field(j, "readout"));
  require(m.readout.d() == m.reservoir_config.n_units + 1, ErrorCode::SchemaError,
          "readout width does not match reservoir size");
  return m;
}

/// Serializes to a string first so a failure never leaves a half-written file
/// behind a successful return.
inline void save_model(const Readout& readout, const ReservoirConfig& config, const std::string& path) {
  const std::string text = dump_json(model_to_json(readout, config), 2) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  require(out.good(), ErrorCode::IoError, "failed writing '" + path + "'");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, false);
  require(!j.is_discarded(), ErrorCode::SchemaError, "'" + path + "' is not valid JSON");
  return model_from_json(j);
}

}  // namespace fedesn
