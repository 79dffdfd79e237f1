#pragma once

// The generational loop. Parents are picked by binary tournament on
// (non-domination rank, crowding distance); offspring come from the mock or
// LLM operators; duplicates are dropped by fingerprint before evaluation;
// survivors are the elitist truncation of parents plus valid offspring.
//
// Run directory layout:
//   config.json          resolved RunConfig
//   individuals.jsonl    one metadata line per individual, in creation order
//   individuals/<fp>.yaml, transcripts/<fp>.txt
//   generations.jsonl    one GenerationRecord per completed generation
//   report.json          totals

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "llmge/evaluator.hpp"
#include "llmge/llm_client.hpp"
#include "llmge/moo_metrics.hpp"
#include "llmge/operators.hpp"

namespace llmge {

enum class EvaluatorKind { Static, External };
enum class OperatorBackend { Mock, Llm };

struct RunConfig {
  GenomeMode mode = GenomeMode::GE1;
  std::vector<std::filesystem::path> seeds;
  int population_size = 20;
  int generations = 10;
  int offspring_per_generation = 0;  // 0 = population_size
  double mutation_ratio = 0.7;       // crossover share is 1 - ratio
  EvaluatorKind evaluator = EvaluatorKind::Static;
  std::filesystem::path results_path;  // external evaluator input
  std::string scale;                   // optional scales row
  int imgsz = 640;
  std::uint64_t rng_seed = 0;
  NormPolicy normalization = NormPolicy::WholeRun;
  OperatorBackend operators = OperatorBackend::Mock;
  LlmConfig llm;
  std::filesystem::path prompt_dir;  // empty = built-in prompts
  bool feedback = true;              // feed the parent's delta back into LLM prompts
  double fault_rate = 0.0;           // probability that an offspring slot emits a malformed genome
  int workers = 1;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// YAML or JSON. Relative seed, results and prompt paths resolve against the
// file's directory. Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
std::string run_config_to_json(const RunConfig& cfg);
void validate_config(const RunConfig& cfg);

enum class IndividualStatus { Valid, Invalid, Pending };
std::string_view to_string(IndividualStatus s);

struct Individual {
  std::optional<ModelGenome> genome;  // absent when the text did not parse
  std::string text;
  std::string fingerprint;
  EvalOutcome outcome = InvalidOutcome{};
  int generation = 0;
  std::vector<std::string> parents;
  std::string origin = "seed";  // seed | fill | mutate | crossover
  std::string backend = "none";  // none | mock | llm | fault
  std::optional<BlockKind> target;
  std::vector<std::string> notes;
  std::string transcript;
  bool operator_failure = false;

  IndividualStatus status() const;
};

class SeedInvalid : public std::runtime_error {
 public:
  SeedInvalid(const std::string& seed, std::vector<Diagnostic> diagnostics);
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

struct GenerationRecord {
  int generation = 0;
  int produced = 0;  // = valid + invalid + pending
  int invalid = 0;
  int valid = 0;
  int pending = 0;
  int duplicates = 0;  // discarded before evaluation, not produced
  int operator_failures = 0;  // subset of invalid
  std::vector<ArchiveMember> archive;
  std::vector<std::string> population;
  std::int64_t elapsed_ms = 0;
};

// Shared state threaded through generations.
struct EvolutionState {
  std::vector<Individual> population;
  ParetoArchive archive;
  std::set<std::string> seen;  // every fingerprint ever produced
  std::vector<Individual> history;  // every individual, in creation order
};

struct EvolutionHooks {
  ChatBackend* backend = nullptr;  // overrides the HTTP client in LLM mode
  // Replaces one offspring slot's operator output; used for fault injection.
  std::function<std::optional<OperatorResult>(int generation, int slot)> override_slot;
};

// Seeds first, then mock-mutated seed copies until population_size is reached.
// Throws SeedInvalid, ConfigError.
std::vector<Individual> seed_population(const RunConfig& cfg);

GenerationRecord evolve_generation(EvolutionState& state, const RunConfig& cfg, int generation,
                                   const EvolutionHooks& hooks = {});

struct RunReport {
  std::string mode;
  int generations = 0;
  int seed_count = 0;
  int population_size = 0;
  int variants = 0;
  int invalid_variants = 0;
  int pending_variants = 0;
  double invalid_fraction = 0;
  int duplicates = 0;
  int operator_failures = 0;
  int pareto_front_size = 0;
  double runtime_seconds = 0;
  std::string objective_source;
  bool synthetic = false;
  std::optional<double> final_dominated_hv;
};

struct RunOptions {
  bool resume = false;
  EvolutionHooks hooks;
  // Called after each generation record is committed.
  std::function<void(const GenerationRecord&)> on_generation;
  // Stop after this many generations of this invocation (simulated kill).
  std::optional<int> stop_after;
};

// Throws ConfigError, SeedInvalid, std::runtime_error on I/O failures.
RunReport run_evolution(const RunConfig& cfg, const std::filesystem::path& run_dir, const RunOptions& options = {});

// Reads a finished run's report.json.
RunReport read_report(const std::filesystem::path& run_dir);
std::vector<GenerationRecord> read_generation_records(const std::filesystem::path& run_dir);

}  // namespace llmge
