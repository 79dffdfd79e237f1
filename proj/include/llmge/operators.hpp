#pragma once

// Genetic operators over genomes. The LLM operators build a chat prompt around
// the target block (GE1) or the whole file (GE2), send it through a
// ChatBackend and splice the returned YAML back in. The mock operators apply
// seeded structural edits and need no model at all.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "llmge/genome.hpp"
#include "llmge/llm_client.hpp"

namespace llmge {

enum class OperatorKind { Mutate, Crossover };
std::string_view to_string(OperatorKind kind);
std::optional<OperatorKind> operator_kind_from_string(std::string_view s);

struct Persona {
  std::string name;
  std::string system_prompt;
};

// Prompt templates. Placeholders: {block} {whole_file} {target_part}
// {feedback} {format_rules}. Unknown braces are left alone.
struct PromptSet {
  Persona persona;
  std::string mutate_ge1;
  std::string mutate_ge2;
  std::string crossover_ge1;
  std::string crossover_ge2;
  std::string feedback;  // placeholders: {operator} {validity} {d_params} {d_cost} {d_precision} {d_recall}
  std::string format_rules;

  static PromptSet defaults();
  // Reads persona.txt, mutate_ge1.txt, mutate_ge2.txt, crossover_ge1.txt,
  // crossover_ge2.txt, feedback.txt, format_rules.txt from `dir`; a missing
  // file keeps the default. The first line of persona.txt is the persona name.
  static PromptSet load(const std::filesystem::path& dir);
};

// Outcome of the operation that produced the parent, relative to its own
// parent. Only the immediate parent's delta is fed back.
struct EotFeedback {
  OperatorKind op = OperatorKind::Mutate;
  bool valid = true;
  double d_params = 0;
  double d_cost = 0;
  double d_precision = 0;
  double d_recall = 0;
};

std::string render_feedback(const EotFeedback& feedback, const PromptSet& prompts);

struct PromptOptions {
  std::string model = "mixtral-8x7b-instruct";
  double temperature = 0.7;
  int max_tokens = 2048;
};

// `parents` has one (mutate) or two (crossover) entries of the same mode.
// GE1: target must be Parameters, Backbone or Head and only that block's text
// is embedded. GE2: the whole file is embedded and `target` names the part to
// change (Whole = the entire architecture). Deterministic.
CompletionRequest build_prompt(const std::vector<const ModelGenome*>& parents, BlockKind target,
                               const PromptSet& prompts, const std::optional<EotFeedback>& feedback,
                               GenomeMode mode, const PromptOptions& options = {});

class EmptyResponse : public std::runtime_error {
 public:
  EmptyResponse() : std::runtime_error("EmptyResponse: completion has no content") {}
};

// First fenced block (language tag optional; an unclosed fence runs to the
// end), else the whole response. Leading blank lines and trailing whitespace
// are trimmed. Throws EmptyResponse only for a blank response.
std::string extract_yaml_payload(std::string_view response);

struct OperatorResult {
  OperatorKind kind = OperatorKind::Mutate;
  BlockKind target = BlockKind::Whole;
  GenomeMode mode = GenomeMode::GE1;
  std::string child_text;  // full document; may be unparseable
  std::string transcript;  // verbatim prompt/response log
  std::vector<std::string> parent_fingerprints;
  std::vector<std::string> notes;
  bool failed = false;  // the operator itself failed (client error, empty response)
};

struct LlmOperatorContext {
  ChatBackend* backend = nullptr;
  PromptSet prompts = PromptSet::defaults();
  PromptOptions options;
};

// Never throws on client errors: they yield failed = true with the error in
// notes and the transcript.
OperatorResult llm_mutate(const ModelGenome& parent, BlockKind target, const LlmOperatorContext& ctx,
                          const std::optional<EotFeedback>& feedback = {});
OperatorResult llm_crossover(const ModelGenome& a, const ModelGenome& b, BlockKind target,
                             const LlmOperatorContext& ctx, const std::optional<EotFeedback>& feedback = {});

// Seeded structural edits: width or depth multiple x0.75 / x1.25, repeats +-1,
// one Conv channel arg x0.75 / x1.25 snapped to a multiple of 8, or
// duplication of one Bottleneck line. Reference re-indexing after a
// duplication stays inside the edited block in GE1.
OperatorResult mock_mutate(const ModelGenome& parent, std::uint64_t rng_seed);
// GE1: each block from a or b by a seeded coin. GE2: single-point splice at a
// seeded layer boundary. Throws GenomeError(ModeMismatch).
OperatorResult mock_crossover(const ModelGenome& a, const ModelGenome& b, std::uint64_t rng_seed);

// Layer list after inserting a copy of layer `pos` at `pos + 1`, with
// references re-targeted (t < pos: t, t == pos: pos + 1, t > pos: t + 1).
// `offset` is the global index of layers[0].
std::vector<LayerSpec> duplicate_layer(const std::vector<LayerSpec>& layers, std::size_t pos, int offset = 0);

}  // namespace llmge
