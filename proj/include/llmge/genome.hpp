#pragma once

// YAML architecture genomes in the Ultralytics model-config dialect:
//
//   nc: 80
//   depth_multiple: 1.0
//   width_multiple: 1.0
//   backbone:
//     - [-1, 1, Conv, [32, 3, 1]]   # [from, number, module, args]
//   head:
//     - [[27, 22, 15], 1, Detect, [nc]]
//
// A genome is segmented into blocks that operators treat as genetic units:
// three blocks (Parameters, Backbone, Head) in GE1 mode, one Whole block in GE2.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "llmge/diagnostics.hpp"

namespace llmge {

enum class GenomeMode { GE1, GE2 };
enum class BlockKind { Parameters, Backbone, Head, Whole };

std::string_view to_string(GenomeMode mode);
std::string_view to_string(BlockKind kind);
std::optional<GenomeMode> genome_mode_from_string(std::string_view s);

// One element of a layer's args list. Strings cover symbolic tokens such as
// `nc` and `None` as well as quoted literals like "nearest".
struct ArgValue {
  using List = std::vector<ArgValue>;
  std::variant<bool, std::int64_t, double, std::string, List> value;

  bool is_int() const { return std::holds_alternative<std::int64_t>(value); }
  bool is_number() const { return is_int() || std::holds_alternative<double>(value); }
  bool is_bool() const { return std::holds_alternative<bool>(value); }
  bool is_string() const { return std::holds_alternative<std::string>(value); }
  bool is_list() const { return std::holds_alternative<List>(value); }

  std::int64_t as_int() const { return std::get<std::int64_t>(value); }
  double as_number() const;
  bool as_bool() const { return std::get<bool>(value); }
  const std::string& as_string() const { return std::get<std::string>(value); }
  const List& as_list() const { return std::get<List>(value); }

  bool operator==(const ArgValue&) const = default;
};

struct LayerSpec {
  std::vector<int> from;    // negative = relative offset back from this layer
  bool from_is_list = false;  // `[-1, 8]` vs `-1`; kept for faithful re-emission
  int repeats = 1;
  std::string module;
  ArgValue::List args;

  bool operator==(const LayerSpec&) const = default;
};

struct ScaleRow {
  std::string key;  // scale letter, e.g. "s"
  double depth = 1.0;
  double width = 1.0;
  std::int64_t max_channels = 0;

  bool operator==(const ScaleRow&) const = default;
};

struct ParamsTable {
  std::int64_t nc = 0;
  std::optional<double> depth_multiple;
  std::optional<double> width_multiple;
  std::vector<ScaleRow> scales;  // source order; the first row is the default
  // Unknown top-level keys (training hyperparameters etc.), value kept as
  // single-line flow YAML.
  std::map<std::string, std::string> extra;

  bool operator==(const ParamsTable&) const = default;
};

struct Block {
  BlockKind kind = BlockKind::Parameters;
  std::vector<LayerSpec> layers;        // empty for Parameters
  std::optional<ParamsTable> params;    // Parameters and Whole only
  std::vector<std::string> raw_comments;  // marker lines such as "# --OPTION--"
  std::size_t backbone_size = 0;        // Whole only: layers[0, backbone_size) are the backbone
};

// Semantic equality: kind, layers, params and (Whole) backbone split.
bool same_content(const Block& a, const Block& b);

class ModelGenome {
 public:
  ModelGenome() = default;
  ModelGenome(GenomeMode mode, std::vector<Block> blocks, std::string source_text = {});

  GenomeMode mode() const noexcept { return mode_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  const std::string& source_text() const noexcept { return source_text_; }

  const ParamsTable& params() const;
  std::span<const LayerSpec> backbone() const;
  std::span<const LayerSpec> head() const;
  // Backbone followed by head; position = global layer index.
  std::vector<LayerSpec> layers() const;
  std::size_t layer_count() const { return backbone().size() + head().size(); }

  // Same blocks, other mode. GE1 <-> GE2 is a representation change only.
  ModelGenome with_mode(GenomeMode mode) const;
  ModelGenome with_block(const Block& replacement) const;

  // Ignores source text and comment markers.
  bool operator==(const ModelGenome& other) const;

 private:
  GenomeMode mode_ = GenomeMode::GE1;
  std::vector<Block> blocks_;
  std::string source_text_;
};

// Builds a genome from its parts in the block layout `mode` requires.
ModelGenome make_genome(GenomeMode mode, ParamsTable params, std::vector<LayerSpec> backbone,
                        std::vector<LayerSpec> head, std::vector<std::string> comments = {});

// Throws GenomeError (YamlSyntax, MissingSection, MalformedLayer, InvalidParams).
ModelGenome parse_genome(std::string_view text, GenomeMode mode);

std::string serialize_genome(const ModelGenome& genome);

// Text of one block as it appears in the serialized document (no markers).
std::string serialize_block(const Block& block);

std::vector<Block> split_blocks(const ModelGenome& genome);
// Inverse of split_blocks. Throws GenomeError(ModeMismatch) when the block
// kinds do not form a GE1 or GE2 layout.
ModelGenome merge_blocks(std::vector<Block> blocks);

// Replaces the text of one GE1 block with `block_text` and returns the full
// document. A bare layer sequence is wrapped under its section key. The result
// is not parsed here; validity is decided downstream.
std::string splice_block_text(const ModelGenome& parent, BlockKind kind, std::string_view block_text);

// 16 hex chars of SHA-256 over the canonical semantic content.
std::string genome_fingerprint(const ModelGenome& genome);
// Fingerprint for text that does not parse ("raw-" + hash of the bytes).
std::string raw_text_fingerprint(std::string_view text);

std::string format_arg(const ArgValue& arg);
std::string format_layer(const LayerSpec& layer);
std::string format_number(double value);

}  // namespace llmge
