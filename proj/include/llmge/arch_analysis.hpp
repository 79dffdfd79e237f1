#pragma once

// Static analysis of a genome: resolve the layer DAG, propagate channels with
// depth/width scaling, decide validity, and compute the two deterministic
// objectives (trainable-parameter count and a multiply-accumulate cost proxy).
//
// Scaling follows the Ultralytics model parser:
//   repeats  n' = n > 1 ? max(round_half_even(n * depth), 1) : n
//   channels c' = make_divisible(min(c, max_channels) * width, 8)
// Parameter rules expand each module into Conv2d(bias=False)+BatchNorm units
// (k*k*c_in/g*c_out + 2*c_out) exactly as the reference modules build them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmge/genome.hpp"

namespace llmge {

struct SpatialSize {
  std::int64_t height = 0;
  std::int64_t width = 0;
  bool operator==(const SpatialSize&) const = default;
};

// One resolved node of the architecture graph.
struct GraphNode {
  int index = 0;
  std::string module;
  std::vector<int> inputs;            // absolute indices; -1 means the image input
  std::vector<std::int64_t> in_channels;
  std::int64_t out_channels = 0;
  int repeats = 1;                    // as written
  int effective_repeats = 1;          // after depth scaling
  double stride = 1.0;                // product of strides from the input image
  ArgValue::List args;                // with `nc` resolved and width scaling applied to the channel arg
  bool symbolic_nc = false;           // Detect-family node whose class count came from `nc`
};

struct ArchGraph {
  std::vector<GraphNode> nodes;
  std::optional<int> detect_index;
  std::vector<int> detect_inputs;
  std::int64_t nc = 0;
  double depth = 1.0;
  double width = 1.0;
  std::optional<std::int64_t> max_channels;
  std::string scale;  // selected scale key, empty when multiples are used
  std::int64_t input_channels = 3;

  // Distinct strides feeding the detection head.
  std::vector<double> head_strides() const;
};

struct BuildOptions {
  std::optional<std::string> scale;  // scale letter; default = first row of `scales`
  bool require_detect_head = true;
  std::int64_t input_channels = 3;
};

// Throws GenomeError: IndexOutOfRange, UnknownModule, BadArgs, NoDetectHead,
// DetectNotTerminal, ChannelMismatch, SpatialMismatch, UnknownScale.
ArchGraph build_graph(const ModelGenome& genome, const BuildOptions& options = {});

struct ValidityVerdict {
  bool valid = false;
  std::vector<Diagnostic> diagnostics;
};

ValidityVerdict validate_genome(const ModelGenome& genome, const BuildOptions& options = {});
// Total on any input: parse failures are reported as diagnostics.
ValidityVerdict validate_genome(std::string_view text, GenomeMode mode, const BuildOptions& options = {});

struct LayerCost {
  int index = 0;
  std::string module;
  std::int64_t params = 0;
  double macs = 0.0;
  std::int64_t out_channels = 0;
  SpatialSize out_size;
};

struct CostReport {
  std::int64_t total_params = 0;
  double cost_units = 0.0;  // multiply-accumulates at the reference resolution
  std::vector<LayerCost> per_layer;
};

inline constexpr SpatialSize kDefaultInputSize{640, 640};

// Trainable parameters of one conv+norm unit.
std::int64_t conv_unit_params(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel, std::int64_t groups = 1);

std::int64_t node_params(const GraphNode& node, const ArchGraph& graph, std::optional<std::int64_t> nc = {});
std::int64_t count_parameters(const ArchGraph& graph, std::optional<std::int64_t> nc = {});

double estimate_inference_cost(const ArchGraph& graph, SpatialSize input = kDefaultInputSize);

// Parameters and per-node MACs in one pass.
CostReport analyze_costs(const ArchGraph& graph, SpatialSize input = kDefaultInputSize);

std::int64_t make_divisible(double value, std::int64_t divisor);
int scaled_repeats(int repeats, double depth);

bool is_supported_module(std::string_view name);
std::vector<std::string_view> supported_modules();
bool is_detect_module(std::string_view name);

}  // namespace llmge
