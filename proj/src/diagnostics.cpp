#include "llmge/diagnostics.hpp"

#include <array>
#include <utility>

namespace llmge {
namespace {

constexpr std::array<std::pair<DiagCode, std::string_view>, 14> kNames{{
    {DiagCode::YamlSyntax, "YamlSyntax"},
    {DiagCode::MissingSection, "MissingSection"},
    {DiagCode::MalformedLayer, "MalformedLayer"},
    {DiagCode::InvalidParams, "InvalidParams"},
    {DiagCode::IndexOutOfRange, "IndexOutOfRange"},
    {DiagCode::UnknownModule, "UnknownModule"},
    {DiagCode::BadArgs, "BadArgs"},
    {DiagCode::NoDetectHead, "NoDetectHead"},
    {DiagCode::DetectNotTerminal, "DetectNotTerminal"},
    {DiagCode::ChannelMismatch, "ChannelMismatch"},
    {DiagCode::SpatialMismatch, "SpatialMismatch"},
    {DiagCode::UnknownScale, "UnknownScale"},
    {DiagCode::OperatorFailure, "OperatorFailure"},
    {DiagCode::ModeMismatch, "ModeMismatch"},
}};

}  // namespace

std::string_view to_string(DiagCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Unknown";
}

std::optional<DiagCode> diag_code_from_string(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return std::nullopt;
}

std::string Diagnostic::describe() const {
  std::string out(to_string(code));
  if (layer) out += " (layer " + std::to_string(*layer) + ")";
  if (line) out += " (line " + std::to_string(*line) + ")";
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace llmge
