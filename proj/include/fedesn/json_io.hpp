#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <string>

#include <json.hpp>

#include "fedesn/error.hpp"

namespace fedesn {

using json = nlohmann::json;

/// 17 significant digits, trailing zeros dropped; enough for any binary64
/// value to survive a text round trip.
inline std::string format_double(double value) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void dump_into(const json& j, std::string& out, int indent, int depth) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump_into(it.value(), out, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        dump_into(v, out, indent, depth + 1);
      }
      newline(depth);
      out += ']';
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      require(std::isfinite(v), ErrorCode::NotFinite, "cannot serialize non-finite number");
      out += format_double(v);
      return;
    }
    default:
      out += j.dump();
      return;
  }
}

}  // namespace detail

/// Serializes with sorted keys (nlohmann's default object ordering) and
/// 17-significant-digit floats. indent < 0 gives the compact single-line form
/// used for wire frames and fingerprints.
inline std::string dump_json(const json& j, int indent = -1) {
  std::string out;
  detail::dump_into(j, out, indent, 0);
  return out;
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Parses a row-major nested array. `rows`/`cols` are required so that empty
/// matrices keep their shape.
inline Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
  require(j.is_array() && static_cast<Eigen::Index>(j.size()) == rows, ErrorCode::SchemaError,
          "matrix row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
            ErrorCode::SchemaError, "matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      require(v.is_number(), ErrorCode::SchemaError, "matrix entry is not a number");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

inline const json& field(const json& obj, const char* key) {
  require(obj.is_object(), ErrorCode::SchemaError, "expected JSON object");
  auto it = obj.find(key);
  require(it != obj.end(), ErrorCode::SchemaError, std::string("missing field '") + key + "'");
  return *it;
}

/// Fetches a required field, translating nlohmann's exceptions to SchemaError.
template <typename T>
T get_field(const json& obj, const char* key) {
  require(obj.is_object(), ErrorCode::SchemaError, "expected JSON object");
  auto it = obj.find(key);
  require(it != obj.end(), ErrorCode::SchemaError, std::string("missing field '") + key + "'");
  try {
    return it->template get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace fedesn
