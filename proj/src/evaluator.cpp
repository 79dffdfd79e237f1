#include "llmge/evaluator.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace llmge {
namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double checked_number(const nlohmann::json& row, const char* key, double lo, double hi, int line) {
  const auto it = row.find(key);
  if (it == row.end() || !it->is_number()) {
    throw SchemaMismatch("results line " + std::to_string(line) + ": missing numeric '" + key + "'");
  }
  const double v = it->get<double>();
  if (!std::isfinite(v) || v < lo || v > hi) {
    throw SchemaMismatch("results line " + std::to_string(line) + ": '" + key + "' out of range");
  }
  return v;
}

}  // namespace

SurrogateScores surrogate_accuracy(std::int64_t params, std::size_t head_strides) {
  const double lp = std::log10(static_cast<double>(std::max<std::int64_t>(params, 1)));
  const double s = static_cast<double>(head_strides);
  return {logistic(0.9 * (lp - 6.0) + 0.3 * s - 0.6), logistic(0.7 * (lp - 6.0) + 0.6 * s - 1.2)};
}

SurrogateScores surrogate_accuracy(const ArchGraph& graph) {
  return surrogate_accuracy(count_parameters(graph), graph.head_strides().size());
}

EvalOutcome static_evaluate(const ModelGenome& genome, const StaticEvalSettings& settings) {
  ArchGraph graph;
  try {
    graph = build_graph(genome, settings.build);
  } catch (const GenomeError& e) {
    return InvalidOutcome{{e.diagnostic()}};
  }
  const CostReport costs = analyze_costs(graph, settings.input);
  const SurrogateScores acc = surrogate_accuracy(costs.total_params, graph.head_strides().size());
  ObjectiveVector v;
  v.params = costs.total_params;
  v.cost = costs.cost_units;
  v.precision = acc.precision;
  v.recall = acc.recall;
  v.cost_kind = CostKind::Macs;
  v.synthetic = true;
  return v;
}

EvalOutcome external_evaluate(const ModelGenome& genome, const std::filesystem::path& results_path,
                              const BuildOptions& build) {
  const ValidityVerdict verdict = validate_genome(genome, build);
  if (!verdict.valid) return InvalidOutcome{verdict.diagnostics};

  const std::string fingerprint = genome_fingerprint(genome);
  // No file yet means the trainer has not reported anything.
  if (!std::filesystem::exists(results_path)) return PendingOutcome{fingerprint};
  std::ifstream in(results_path);
  if (!in) throw SchemaMismatch("cannot open results file " + results_path.string());
  std::optional<ObjectiveVector> found;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaMismatch("results line " + std::to_string(line) + ": " + e.what());
    }
    if (!row.is_object() || !row.contains("fingerprint") || !row["fingerprint"].is_string()) {
      throw SchemaMismatch("results line " + std::to_string(line) + ": missing fingerprint");
    }
    if (row["fingerprint"].get<std::string>() != fingerprint) continue;
    ObjectiveVector v;
    v.params = static_cast<std::int64_t>(checked_number(row, "params", 0, 1e15, line));
    v.cost = checked_number(row, "latency_ms", 0, 1e12, line);
    v.precision = checked_number(row, "precision", 0, 1, line);
    v.recall = checked_number(row, "recall", 0, 1, line);
    v.map50 = checked_number(row, "map50", 0, 1, line);
    v.map50_95 = checked_number(row, "map50_95", 0, 1, line);
    v.cost_kind = CostKind::LatencyMs;
    found = v;  // the latest row for a fingerprint wins
  }
  if (found) return *found;
  return PendingOutcome{fingerprint};
}

}  // namespace llmge
