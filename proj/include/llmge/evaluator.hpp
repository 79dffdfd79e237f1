#pragma once

// Genome -> objective vector. Two backends:
//  * static: parameters and MAC cost from arch_analysis, precision/recall from a
//    synthetic surrogate (labelled as such everywhere it is reported);
//  * external: reads results a separate trainer wrote, keyed by fingerprint.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "llmge/arch_analysis.hpp"

namespace llmge {

enum class CostKind { Macs, LatencyMs };

struct ObjectiveVector {
  std::int64_t params = 0;
  double cost = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> map50;
  std::optional<double> map50_95;
  CostKind cost_kind = CostKind::Macs;
  bool synthetic = false;  // precision/recall came from the surrogate

  bool operator==(const ObjectiveVector&) const = default;
};

struct InvalidOutcome {
  std::vector<Diagnostic> diagnostics;
  bool operator==(const InvalidOutcome&) const = default;
};

struct PendingOutcome {
  std::string fingerprint;
  bool operator==(const PendingOutcome&) const = default;
};

class EvalOutcome {
 public:
  EvalOutcome(ObjectiveVector v) : value_(std::move(v)) {}
  EvalOutcome(InvalidOutcome v) : value_(std::move(v)) {}
  EvalOutcome(PendingOutcome v) : value_(std::move(v)) {}

  bool is_valid() const { return std::holds_alternative<ObjectiveVector>(value_); }
  bool is_invalid() const { return std::holds_alternative<InvalidOutcome>(value_); }
  bool is_pending() const { return std::holds_alternative<PendingOutcome>(value_); }

  const ObjectiveVector& objectives() const { return std::get<ObjectiveVector>(value_); }
  const std::vector<Diagnostic>& diagnostics() const { return std::get<InvalidOutcome>(value_).diagnostics; }

  bool operator==(const EvalOutcome&) const = default;

 private:
  std::variant<ObjectiveVector, InvalidOutcome, PendingOutcome> value_;
};

struct SurrogateScores {
  double precision = 0;
  double recall = 0;
};

// Synthetic, deterministic stand-in for trained accuracy:
//   z_p = 0.9 (log10 P - 6) + 0.3 s - 0.6,   precision = 1 / (1 + e^-z_p)
//   z_r = 0.7 (log10 P - 6) + 0.6 s - 1.2,   recall    = 1 / (1 + e^-z_r)
// with P = total parameters and s = number of distinct strides feeding the
// detection head. Monotone in both features, bounded in (0, 1).
SurrogateScores surrogate_accuracy(const ArchGraph& graph);
SurrogateScores surrogate_accuracy(std::int64_t params, std::size_t head_strides);

struct StaticEvalSettings {
  BuildOptions build;
  SpatialSize input = kDefaultInputSize;
};

EvalOutcome static_evaluate(const ModelGenome& genome, const StaticEvalSettings& settings = {});

class SchemaMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Results file: JSON lines
//   {fingerprint, params, latency_ms, precision, recall, map50, map50_95}
// A missing row or file yields Pending. Throws SchemaMismatch on malformed rows or
// out-of-range values. Invalid genomes are reported Invalid without reading.
EvalOutcome external_evaluate(const ModelGenome& genome, const std::filesystem::path& results_path,
                              const BuildOptions& build = {});

}  // namespace llmge
