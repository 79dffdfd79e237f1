#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace llmge {

// Machine-readable failure codes. The string forms are part of the run-log and
// CLI JSON contracts; do not rename.
enum class DiagCode {
  YamlSyntax,
  MissingSection,
  MalformedLayer,
  InvalidParams,
  IndexOutOfRange,
  UnknownModule,
  BadArgs,
  NoDetectHead,
  DetectNotTerminal,
  ChannelMismatch,
  SpatialMismatch,
  UnknownScale,
  OperatorFailure,
  ModeMismatch,
};

std::string_view to_string(DiagCode code);
std::optional<DiagCode> diag_code_from_string(std::string_view name);

struct Diagnostic {
  DiagCode code;
  std::string message;
  std::optional<int> layer;  // global layer index
  std::optional<int> line;   // 1-based source line

  std::string describe() const;
  bool operator==(const Diagnostic&) const = default;
};

// Thrown by the genome and arch_analysis layers; carries one diagnostic.
class GenomeError : public std::runtime_error {
 public:
  explicit GenomeError(Diagnostic diag)
      : std::runtime_error(diag.describe()), diag_(std::move(diag)) {}

  const Diagnostic& diagnostic() const noexcept { return diag_; }
  DiagCode code() const noexcept { return diag_.code; }

 private:
  Diagnostic diag_;
};

}  // namespace llmge
