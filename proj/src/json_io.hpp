#pragma once

// JSON shapes shared by the run log writer and its readers.

#include <json.hpp>

#include "llmge/diagnostics.hpp"
#include "llmge/evaluator.hpp"

namespace llmge::detail {

inline nlohmann::json objectives_to_json(const ObjectiveVector& v) {
  nlohmann::json j;
  j["params"] = v.params;
  j["cost"] = v.cost;
  j["cost_kind"] = v.cost_kind == CostKind::Macs ? "macs" : "latency_ms";
  j["precision"] = v.precision;
  j["recall"] = v.recall;
  j["map50"] = v.map50 ? nlohmann::json(*v.map50) : nlohmann::json(nullptr);
  j["map50_95"] = v.map50_95 ? nlohmann::json(*v.map50_95) : nlohmann::json(nullptr);
  j["synthetic"] = v.synthetic;
  return j;
}

// Throws nlohmann::json::exception on missing or mistyped fields.
inline ObjectiveVector objectives_from_json(const nlohmann::json& j) {
  ObjectiveVector v;
  v.params = j.at("params").get<std::int64_t>();
  v.cost = j.at("cost").get<double>();
  v.cost_kind = j.at("cost_kind").get<std::string>() == "latency_ms" ? CostKind::LatencyMs : CostKind::Macs;
  v.precision = j.at("precision").get<double>();
  v.recall = j.at("recall").get<double>();
  if (j.contains("map50") && !j["map50"].is_null()) v.map50 = j["map50"].get<double>();
  if (j.contains("map50_95") && !j["map50_95"].is_null()) v.map50_95 = j["map50_95"].get<double>();
  v.synthetic = j.value("synthetic", false);
  return v;
}

inline nlohmann::json diagnostic_to_json(const Diagnostic& d) {
  nlohmann::json j{{"code", std::string(to_string(d.code))}, {"message", d.message}};
  if (d.layer) j["layer"] = *d.layer;
  if (d.line) j["line"] = *d.line;
  return j;
}

inline Diagnostic diagnostic_from_json(const nlohmann::json& j) {
  Diagnostic d{DiagCode::OperatorFailure, j.value("message", std::string()), {}, {}};
  if (auto code = diag_code_from_string(j.at("code").get<std::string>())) d.code = *code;
  if (j.contains("layer")) d.layer = j["layer"].get<int>();
  if (j.contains("line")) d.line = j["line"].get<int>();
  return d;
}

}  // namespace llmge::detail
