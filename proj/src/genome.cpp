#include "llmge/genome.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <regex>
#include <sstream>

namespace llmge {
namespace {

constexpr std::string_view kBlockMarker = "# --Block--";

[[noreturn]] void fail(DiagCode code, std::string message, std::optional<int> line = {},
                       std::optional<int> layer = {}) {
  throw GenomeError(Diagnostic{code, std::move(message), layer, line});
}

int line_of(const YAML::Node& node) { return node.Mark().line + 1; }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool is_marker_line(std::string_view line) {
  static const std::regex marker(R"(^\s*#\s*--.*--\s*$)");
  return std::regex_match(line.begin(), line.end(), marker);
}

const std::regex& int_pattern() {
  static const std::regex re(R"(^[-+]?[0-9]+$)");
  return re;
}

const std::regex& float_pattern() {
  static const std::regex re(R"(^[-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?$)");
  return re;
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  if (!std::regex_match(s, int_pattern())) return std::nullopt;
  std::int64_t v = 0;
  const char* begin = s.data() + (s[0] == '+' ? 1 : 0);
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_float(const std::string& s) {
  if (!std::regex_match(s, float_pattern())) return std::nullopt;
  double v = 0;
  const char* begin = s.data() + (s[0] == '+' ? 1 : 0);
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

bool is_plain(const YAML::Node& node) { return node.Tag() == "?"; }

ArgValue scalar_arg(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (!is_plain(node)) return ArgValue{s};
  if (s == "true" || s == "True" || s == "TRUE") return ArgValue{true};
  if (s == "false" || s == "False" || s == "FALSE") return ArgValue{false};
  if (s.empty() || s == "~" || s == "null" || s == "Null" || s == "NULL") return ArgValue{std::string("None")};
  if (auto i = parse_int(s)) return ArgValue{*i};
  if (auto d = parse_float(s)) return ArgValue{*d};
  return ArgValue{s};
}

ArgValue convert_arg(const YAML::Node& node, int layer) {
  if (node.IsScalar()) return scalar_arg(node);
  if (node.IsNull()) return ArgValue{std::string("None")};
  if (node.IsSequence()) {
    ArgValue::List items;
    for (const auto& item : node) items.push_back(convert_arg(item, layer));
    return ArgValue{std::move(items)};
  }
  fail(DiagCode::MalformedLayer, "args must contain scalars or lists", line_of(node), layer);
}

std::optional<std::int64_t> node_int(const YAML::Node& node) {
  if (!node.IsScalar() || !is_plain(node)) return std::nullopt;
  return parse_int(node.Scalar());
}

std::optional<double> node_number(const YAML::Node& node) {
  if (!node.IsScalar() || !is_plain(node)) return std::nullopt;
  if (auto i = parse_int(node.Scalar())) return static_cast<double>(*i);
  return parse_float(node.Scalar());
}

LayerSpec convert_layer(const YAML::Node& node, int index) {
  const int line = line_of(node);
  if (!node.IsSequence() || node.size() != 4) {
    fail(DiagCode::MalformedLayer, "layer must be a 4-element [from, number, module, args] tuple", line, index);
  }
  LayerSpec layer;
  const YAML::Node from = node[0];
  if (from.IsSequence()) {
    layer.from_is_list = true;
    if (from.size() == 0) fail(DiagCode::MalformedLayer, "empty from list", line, index);
    for (const auto& f : from) {
      auto v = node_int(f);
      if (!v) fail(DiagCode::MalformedLayer, "from entries must be integers", line, index);
      layer.from.push_back(static_cast<int>(*v));
    }
  } else {
    auto v = node_int(from);
    if (!v) fail(DiagCode::MalformedLayer, "from must be an integer or integer list", line, index);
    layer.from.push_back(static_cast<int>(*v));
  }
  auto repeats = node_int(node[1]);
  if (!repeats || *repeats < 1) fail(DiagCode::MalformedLayer, "number must be a positive integer", line, index);
  layer.repeats = static_cast<int>(*repeats);

  const YAML::Node module = node[2];
  if (!module.IsScalar() || module.Scalar().empty()) {
    fail(DiagCode::MalformedLayer, "module must be a name", line, index);
  }
  layer.module = module.Scalar();

  const YAML::Node args = node[3];
  if (args.IsSequence()) {
    for (const auto& a : args) layer.args.push_back(convert_arg(a, index));
  } else if (!args.IsNull()) {
    fail(DiagCode::MalformedLayer, "args must be a list", line, index);
  }
  return layer;
}

std::vector<LayerSpec> convert_section(const YAML::Node& node, int first_index) {
  std::vector<LayerSpec> layers;
  if (node.IsNull()) return layers;
  if (!node.IsSequence()) fail(DiagCode::MalformedLayer, "section must be a list of layers", line_of(node));
  int index = first_index;
  for (const auto& item : node) layers.push_back(convert_layer(item, index++));
  return layers;
}

std::string flow_yaml(const YAML::Node& node) {
  YAML::Emitter out;
  out.SetMapFormat(YAML::Flow);
  out.SetSeqFormat(YAML::Flow);
  out << node;
  return out.c_str();
}

ParamsTable convert_params(const YAML::Node& root) {
  ParamsTable params;
  const YAML::Node nc = root["nc"];
  if (!nc) fail(DiagCode::InvalidParams, "missing nc");
  auto nc_value = node_int(nc);
  if (!nc_value || *nc_value <= 0) fail(DiagCode::InvalidParams, "nc must be a positive integer", line_of(nc));
  params.nc = *nc_value;

  auto multiple = [&](const char* key) -> std::optional<double> {
    const YAML::Node n = root[key];
    if (!n) return std::nullopt;
    auto v = node_number(n);
    if (!v || !(*v > 0.0) || !std::isfinite(*v)) {
      fail(DiagCode::InvalidParams, std::string(key) + " must be a positive number", line_of(n));
    }
    return v;
  };
  params.depth_multiple = multiple("depth_multiple");
  params.width_multiple = multiple("width_multiple");

  if (const YAML::Node scales = root["scales"]; scales && !scales.IsNull()) {
    if (!scales.IsMap()) fail(DiagCode::InvalidParams, "scales must be a map", line_of(scales));
    for (const auto& kv : scales) {
      const YAML::Node row = kv.second;
      const int line = line_of(row);
      if (!row.IsSequence() || row.size() != 3) {
        fail(DiagCode::InvalidParams, "scale rows are [depth, width, max_channels]", line);
      }
      auto depth = node_number(row[0]);
      auto width = node_number(row[1]);
      auto max_ch = node_int(row[2]);
      if (!depth || !width || !(*depth > 0) || !(*width > 0)) {
        fail(DiagCode::InvalidParams, "scale multiples must be positive", line);
      }
      if (!max_ch || *max_ch <= 0) fail(DiagCode::InvalidParams, "max_channels must be a positive integer", line);
      params.scales.push_back(ScaleRow{kv.first.Scalar(), *depth, *width, *max_ch});
    }
  }
  const bool has_multiples = params.depth_multiple && params.width_multiple;
  if (!has_multiples && params.scales.empty()) {
    fail(DiagCode::InvalidParams, "need depth_multiple and width_multiple, or scales");
  }

  static const std::array<std::string_view, 6> known{"nc", "depth_multiple", "width_multiple", "scales", "backbone",
                                                     "head"};
  for (const auto& kv : root) {
    const std::string key = kv.first.Scalar();
    if (std::find(known.begin(), known.end(), key) != known.end()) continue;
    params.extra[key] = flow_yaml(kv.second);
  }
  return params;
}

struct KeyLine {
  int line;
  BlockKind kind;
};

// Marker comments attach to the nearest top-level key below them.
std::vector<std::pair<BlockKind, std::string>> collect_markers(std::string_view text, std::vector<KeyLine> keys) {
  std::sort(keys.begin(), keys.end(), [](const KeyLine& a, const KeyLine& b) { return a.line < b.line; });
  std::vector<std::pair<BlockKind, std::string>> markers;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const std::string_view line = text.substr(pos, end == std::string_view::npos ? text.npos : end - pos);
    ++line_no;
    if (is_marker_line(line)) {
      BlockKind kind = keys.empty() ? BlockKind::Parameters : keys.back().kind;
      for (const auto& k : keys) {
        if (k.line > line_no) {
          kind = k.kind;
          break;
        }
      }
      markers.emplace_back(kind, std::string(trim(line)));
    }
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return markers;
}

void validate_layout(GenomeMode mode, const std::vector<Block>& blocks) {
  const bool ok =
      mode == GenomeMode::GE1
          ? blocks.size() == 3 && blocks[0].kind == BlockKind::Parameters && blocks[1].kind == BlockKind::Backbone &&
                blocks[2].kind == BlockKind::Head && blocks[0].params.has_value()
          : blocks.size() == 1 && blocks[0].kind == BlockKind::Whole && blocks[0].params.has_value() &&
                blocks[0].backbone_size <= blocks[0].layers.size();
  if (!ok) fail(DiagCode::ModeMismatch, std::string("block layout does not match mode ") + std::string(to_string(mode)));
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::string render_params(const ParamsTable& p) {
  std::ostringstream out;
  out << "nc: " << p.nc << " # number of classes\n";
  if (p.depth_multiple) out << "depth_multiple: " << format_number(*p.depth_multiple) << " # model depth multiple\n";
  if (p.width_multiple) out << "width_multiple: " << format_number(*p.width_multiple) << " # layer channel multiple\n";
  if (!p.scales.empty()) {
    out << "scales: # model compound scaling constants\n  # [depth, width, max_channels]\n";
    for (const auto& row : p.scales) {
      out << "  " << row.key << ": [" << format_number(row.depth) << ", " << format_number(row.width) << ", "
          << row.max_channels << "]\n";
    }
  }
  for (const auto& [key, value] : p.extra) out << key << ": " << value << "\n";
  return out.str();
}

std::string render_section(std::string_view key, std::span<const LayerSpec> layers) {
  std::ostringstream out;
  if (layers.empty()) {
    out << key << ": []\n";
    return out.str();
  }
  out << key << ":\n  # [from, number, module, args]\n";
  for (const auto& layer : layers) out << "  - " << format_layer(layer) << "\n";
  return out.str();
}

std::string_view block_label(BlockKind kind) {
  switch (kind) {
    case BlockKind::Parameters: return "# Parameters";
    case BlockKind::Backbone: return "# backbone";
    case BlockKind::Head: return "# head";
    case BlockKind::Whole: return "# Whole";
  }
  return "";
}

void emit_comments(std::ostringstream& out, const Block& block) {
  for (const auto& c : block.raw_comments) {
    if (c != kBlockMarker) out << c << "\n";
  }
}

std::string hex_sha256(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string normalize_section_payload(BlockKind kind, std::string_view payload) {
  const std::string_view key = kind == BlockKind::Backbone ? "backbone" : "head";
  YAML::Node node;
  try {
    node = YAML::Load(std::string(payload));
  } catch (const YAML::Exception&) {
    return std::string(payload);
  }
  if (node.IsSequence()) {
    std::ostringstream out;
    out << key << ":\n";
    std::istringstream lines{std::string(payload)};
    for (std::string line; std::getline(lines, line);) out << "  " << line << "\n";
    return out.str();
  }
  if (node.IsMap() && node[std::string(key)]) {
    const YAML::Node section = node[std::string(key)];
    std::ostringstream out;
    out << key << ":\n";
    if (section.IsSequence()) {
      for (const auto& item : section) out << "  - " << flow_yaml(item) << "\n";
    } else {
      out << "  " << flow_yaml(section) << "\n";
    }
    return out.str();
  }
  return std::string(payload);
}

std::string normalize_params_payload(std::string_view payload) {
  YAML::Node node;
  try {
    node = YAML::Load(std::string(payload));
  } catch (const YAML::Exception&) {
    return std::string(payload);
  }
  if (!node.IsMap() || (!node["backbone"] && !node["head"])) return std::string(payload);
  std::ostringstream out;
  for (const auto& kv : node) {
    const std::string key = kv.first.Scalar();
    if (key == "backbone" || key == "head") continue;
    out << key << ": " << flow_yaml(kv.second) << "\n";
  }
  return out.str();
}

}  // namespace

std::string_view to_string(GenomeMode mode) { return mode == GenomeMode::GE1 ? "GE1" : "GE2"; }

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Parameters: return "parameters";
    case BlockKind::Backbone: return "backbone";
    case BlockKind::Head: return "head";
    case BlockKind::Whole: return "whole";
  }
  return "";
}

std::optional<GenomeMode> genome_mode_from_string(std::string_view s) {
  if (s == "GE1" || s == "ge1") return GenomeMode::GE1;
  if (s == "GE2" || s == "ge2") return GenomeMode::GE2;
  return std::nullopt;
}

double ArgValue::as_number() const {
  if (is_int()) return static_cast<double>(as_int());
  return std::get<double>(value);
}

bool same_content(const Block& a, const Block& b) {
  return a.kind == b.kind && a.layers == b.layers && a.params == b.params &&
         (a.kind != BlockKind::Whole || a.backbone_size == b.backbone_size);
}

ModelGenome::ModelGenome(GenomeMode mode, std::vector<Block> blocks, std::string source_text)
    : mode_(mode), blocks_(std::move(blocks)), source_text_(std::move(source_text)) {
  validate_layout(mode_, blocks_);
}

const ParamsTable& ModelGenome::params() const { return *blocks_.at(0).params; }

std::span<const LayerSpec> ModelGenome::backbone() const {
  if (mode_ == GenomeMode::GE1) return blocks_.at(1).layers;
  const auto& whole = blocks_.at(0);
  return std::span<const LayerSpec>(whole.layers).first(whole.backbone_size);
}

std::span<const LayerSpec> ModelGenome::head() const {
  if (mode_ == GenomeMode::GE1) return blocks_.at(2).layers;
  const auto& whole = blocks_.at(0);
  return std::span<const LayerSpec>(whole.layers).subspan(whole.backbone_size);
}

std::vector<LayerSpec> ModelGenome::layers() const {
  std::vector<LayerSpec> out(backbone().begin(), backbone().end());
  out.insert(out.end(), head().begin(), head().end());
  return out;
}

ModelGenome ModelGenome::with_mode(GenomeMode mode) const {
  std::vector<std::string> comments;
  for (const auto& b : blocks_) comments.insert(comments.end(), b.raw_comments.begin(), b.raw_comments.end());
  auto bb = backbone();
  auto hd = head();
  return make_genome(mode, params(), {bb.begin(), bb.end()}, {hd.begin(), hd.end()}, std::move(comments));
}

ModelGenome ModelGenome::with_block(const Block& replacement) const {
  auto blocks = blocks_;
  bool replaced = false;
  for (auto& b : blocks) {
    if (b.kind == replacement.kind) {
      b = replacement;
      replaced = true;
    }
  }
  if (!replaced) fail(DiagCode::ModeMismatch, "genome has no block of that kind");
  return ModelGenome(mode_, std::move(blocks));
}

bool ModelGenome::operator==(const ModelGenome& other) const {
  if (mode_ != other.mode_ || blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!same_content(blocks_[i], other.blocks_[i])) return false;
  }
  return true;
}

ModelGenome make_genome(GenomeMode mode, ParamsTable params, std::vector<LayerSpec> backbone,
                        std::vector<LayerSpec> head, std::vector<std::string> comments) {
  std::vector<Block> blocks;
  if (mode == GenomeMode::GE1) {
    Block p{BlockKind::Parameters, {}, std::move(params), {}, 0};
    Block b{BlockKind::Backbone, std::move(backbone), std::nullopt, {}, 0};
    Block h{BlockKind::Head, std::move(head), std::nullopt, {}, 0};
    p.raw_comments = std::move(comments);
    blocks = {std::move(p), std::move(b), std::move(h)};
  } else {
    Block w{BlockKind::Whole, std::move(backbone), std::move(params), std::move(comments), 0};
    w.backbone_size = w.layers.size();
    w.layers.insert(w.layers.end(), head.begin(), head.end());
    blocks.push_back(std::move(w));
  }
  return ModelGenome(mode, std::move(blocks));
}

ModelGenome parse_genome(std::string_view text, GenomeMode mode) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    fail(DiagCode::YamlSyntax, e.msg, e.mark.line + 1);
  } catch (const YAML::Exception& e) {
    fail(DiagCode::YamlSyntax, e.what());
  }
  if (!root || root.IsNull()) fail(DiagCode::YamlSyntax, "empty document");
  if (!root.IsMap()) fail(DiagCode::YamlSyntax, "top level must be a mapping", line_of(root));

  const YAML::Node backbone_node = root["backbone"];
  const YAML::Node head_node = root["head"];
  if (!backbone_node) fail(DiagCode::MissingSection, "no backbone section");
  if (!head_node) fail(DiagCode::MissingSection, "no head section");

  ParamsTable params = convert_params(root);
  std::vector<LayerSpec> backbone = convert_section(backbone_node, 0);
  std::vector<LayerSpec> head = convert_section(head_node, static_cast<int>(backbone.size()));

  std::vector<KeyLine> keys;
  for (const auto& kv : root) {
    const std::string key = kv.first.Scalar();
    const BlockKind kind = key == "backbone" ? BlockKind::Backbone
                           : key == "head"   ? BlockKind::Head
                                             : BlockKind::Parameters;
    keys.push_back(KeyLine{line_of(kv.first), kind});
  }
  auto markers = collect_markers(text, std::move(keys));

  ModelGenome genome = make_genome(mode, std::move(params), std::move(backbone), std::move(head));
  auto blocks = genome.blocks();
  for (auto& [kind, line] : markers) {
    for (auto& b : blocks) {
      if (mode == GenomeMode::GE2 || b.kind == kind) b.raw_comments.push_back(line);
    }
  }
  return ModelGenome(mode, std::move(blocks), std::string(text));
}

std::string serialize_block(const Block& block) {
  switch (block.kind) {
    case BlockKind::Parameters: return render_params(*block.params);
    case BlockKind::Backbone: return render_section("backbone", block.layers);
    case BlockKind::Head: return render_section("head", block.layers);
    case BlockKind::Whole: {
      std::span<const LayerSpec> all(block.layers);
      return render_params(*block.params) + "\n" + render_section("backbone", all.first(block.backbone_size)) + "\n" +
             render_section("head", all.subspan(block.backbone_size));
    }
  }
  return {};
}

std::string serialize_genome(const ModelGenome& genome) {
  std::ostringstream out;
  if (genome.mode() == GenomeMode::GE2) {
    emit_comments(out, genome.blocks()[0]);
    out << serialize_block(genome.blocks()[0]);
    return out.str();
  }
  bool first = true;
  for (const auto& block : genome.blocks()) {
    if (!first) out << "\n";
    first = false;
    out << kBlockMarker << "\n" << block_label(block.kind) << "\n";
    emit_comments(out, block);
    out << serialize_block(block);
  }
  return out.str();
}

std::vector<Block> split_blocks(const ModelGenome& genome) { return genome.blocks(); }

ModelGenome merge_blocks(std::vector<Block> blocks) {
  const GenomeMode mode =
      blocks.size() == 1 && blocks[0].kind == BlockKind::Whole ? GenomeMode::GE2 : GenomeMode::GE1;
  return ModelGenome(mode, std::move(blocks));
}

std::string splice_block_text(const ModelGenome& parent, BlockKind kind, std::string_view block_text) {
  if (parent.mode() != GenomeMode::GE1 || kind == BlockKind::Whole) {
    fail(DiagCode::ModeMismatch, "block splicing applies to GE1 genomes");
  }
  std::string payload(trim(block_text));
  payload += "\n";
  std::ostringstream out;
  bool first = true;
  for (const auto& block : parent.blocks()) {
    if (!first) out << "\n";
    first = false;
    out << kBlockMarker << "\n" << block_label(block.kind) << "\n";
    if (block.kind != kind) {
      emit_comments(out, block);
      out << serialize_block(block);
    } else if (kind == BlockKind::Parameters) {
      out << normalize_params_payload(payload);
    } else {
      out << normalize_section_payload(kind, payload);
    }
  }
  return out.str();
}

std::string genome_fingerprint(const ModelGenome& genome) {
  const ParamsTable& p = genome.params();
  std::ostringstream canon;
  canon << "nc=" << p.nc << "\n";
  canon << "depth=" << (p.depth_multiple ? format_number(*p.depth_multiple) : "-") << "\n";
  canon << "width=" << (p.width_multiple ? format_number(*p.width_multiple) : "-") << "\n";
  for (const auto& row : p.scales) {
    canon << "scale=" << row.key << ":" << format_number(row.depth) << "," << format_number(row.width) << ","
          << row.max_channels << "\n";
  }
  for (const auto& [k, v] : p.extra) canon << "extra=" << k << ":" << v << "\n";
  canon << "backbone_size=" << genome.backbone().size() << "\n";
  for (const auto& layer : genome.layers()) canon << "L " << format_layer(layer) << "\n";
  return hex_sha256(canon.str()).substr(0, 16);
}

std::string raw_text_fingerprint(std::string_view text) { return "raw-" + hex_sha256(text).substr(0, 12); }

std::string format_number(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  std::string s(buf.data(), ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_arg(const ArgValue& arg) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) {
          return v ? "True" : "False";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_number(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return v == "nc" || v == "None" ? v : quote(v);
        } else {
          std::string out = "[";
          for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ", ";
            out += format_arg(v[i]);
          }
          return out + "]";
        }
      },
      arg.value);
}

std::string format_layer(const LayerSpec& layer) {
  std::string out = "[";
  if (layer.from_is_list) {
    out += "[";
    for (std::size_t i = 0; i < layer.from.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(layer.from[i]);
    }
    out += "]";
  } else {
    out += std::to_string(layer.from.at(0));
  }
  out += ", " + std::to_string(layer.repeats) + ", " + layer.module + ", ";
  out += format_arg(ArgValue{layer.args});
  return out + "]";
}

}  // namespace llmge
