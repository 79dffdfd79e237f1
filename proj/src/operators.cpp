#include "llmge/operators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "llmge/arch_analysis.hpp"

namespace llmge {
namespace {

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
  for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

std::string with_newline(std::string s) {
  if (s.empty() || s.back() != '\n') s += '\n';
  return s;
}

std::string part_name(BlockKind kind) {
  switch (kind) {
    case BlockKind::Parameters: return "parameters";
    case BlockKind::Backbone: return "backbone";
    case BlockKind::Head: return "head";
    case BlockKind::Whole: return "whole architecture";
  }
  return "";
}

const Block& find_block(const ModelGenome& g, BlockKind kind) {
  for (const auto& b : g.blocks()) {
    if (b.kind == kind) return b;
  }
  throw std::invalid_argument("genome has no " + part_name(kind) + " block");
}

std::string signed_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.*g", precision, v);
  return buf;
}

std::string default_format_rules() {
  std::string modules;
  for (auto m : supported_modules()) {
    if (!modules.empty()) modules += ", ";
    modules += m;
  }
  return "Layer format: every layer is a tuple [from, number, module, args].\n"
         "- from: input layer index; -1 is the previous layer, a list such as [-1, 6] feeds several layers "
         "(Concat, Detect).\n"
         "- number: how many times the module repeats (scaled by depth_multiple).\n"
         "- module: one of " +
         modules +
         ".\n"
         "- args: module arguments; the first is usually the output channel count (scaled by width_multiple).\n"
         "The detection layer must be the last layer of the head and appear exactly once.\n"
         "Reply with exactly one fenced ```yaml code block holding the result and nothing else inside the fence.";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fenced(std::string_view text) { return "```yaml\n" + with_newline(std::string(text)) + "```\n"; }

std::string format_transcript(OperatorKind kind, GenomeMode mode, BlockKind target,
                              const std::vector<std::string>& parents, const CompletionRequest& req,
                              const std::string& response, const std::vector<std::string>& notes) {
  std::ostringstream out;
  out << "### operator: " << to_string(kind) << "\n";
  out << "### mode: " << to_string(mode) << "\n";
  out << "### target: " << part_name(target) << "\n";
  out << "### parents:";
  for (const auto& p : parents) out << " " << p;
  out << "\n### model: " << req.model << "\n";
  out << "### temperature: " << format_number(req.temperature) << "\n";
  for (const auto& m : req.messages) out << "=== " << m.role << " ===\n" << with_newline(m.content);
  out << "=== assistant ===\n" << with_newline(response);
  for (const auto& n : notes) out << "### note: " << n << "\n";
  out << "=== end ===\n";
  return out.str();
}

OperatorResult run_llm_operator(OperatorKind kind, const std::vector<const ModelGenome*>& parents,
                                BlockKind target, const LlmOperatorContext& ctx,
                                const std::optional<EotFeedback>& feedback) {
  const ModelGenome& base = *parents.front();
  OperatorResult result;
  result.kind = kind;
  result.target = target;
  result.mode = base.mode();
  for (const auto* p : parents) result.parent_fingerprints.push_back(genome_fingerprint(*p));

  const CompletionRequest req = build_prompt(parents, target, ctx.prompts, feedback, base.mode(), ctx.options);
  std::string response;
  try {
    if (ctx.backend == nullptr) throw LlmError(LlmErrorKind::Config, "no chat backend configured");
    response = ctx.backend->complete(req).text;
    const std::string payload = extract_yaml_payload(response);
    if (base.mode() == GenomeMode::GE1) {
      result.child_text = splice_block_text(base, target, payload);
      result.notes.push_back("spliced " + part_name(target) + " block into parent " +
                             result.parent_fingerprints.front());
    } else {
      result.child_text = with_newline(payload);
      result.notes.push_back("whole-file payload");
    }
  } catch (const LlmError& e) {
    result.failed = true;
    result.notes.push_back(to_string(e.kind()) + ": " + e.what());
  } catch (const std::exception& e) {
    result.failed = true;
    result.notes.push_back(e.what());
  }
  result.transcript =
      format_transcript(kind, base.mode(), target, result.parent_fingerprints, req, response, result.notes);
  return result;
}

// Portable across standard libraries, unlike std::uniform_int_distribution.
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
bool coin(std::mt19937_64& rng) { return (rng() >> 11) & 1U; }

bool is_structural(const LayerSpec& l) {
  return l.module == "Concat" || l.module == "nn.Upsample" || is_detect_module(l.module);
}

struct LayerSite {
  BlockKind block;  // Backbone/Head (GE1) or Whole (GE2)
  std::size_t index;  // within the block's layer list
  int offset;         // global index of the block's first layer
};

std::vector<LayerSite> layer_sites(const ModelGenome& g) {
  std::vector<LayerSite> sites;
  if (g.mode() == GenomeMode::GE2) {
    const auto& whole = g.blocks().front();
    for (std::size_t i = 0; i < whole.layers.size(); ++i) sites.push_back({BlockKind::Whole, i, 0});
  } else {
    for (std::size_t i = 0; i < g.backbone().size(); ++i) sites.push_back({BlockKind::Backbone, i, 0});
    const int off = static_cast<int>(g.backbone().size());
    for (std::size_t i = 0; i < g.head().size(); ++i) sites.push_back({BlockKind::Head, i, off});
  }
  return sites;
}

std::string scale_multiplier(ParamsTable& p, bool width, double factor) {
  auto next = [factor](double v) { return std::clamp(v * factor, 0.0625, 4.0); };
  const char* name = width ? "width" : "depth";
  if (!p.scales.empty()) {
    ScaleRow& row = p.scales.front();
    double& v = width ? row.width : row.depth;
    const double old = v;
    v = next(v);
    return std::string("scales.") + row.key + "." + name + " " + format_number(old) + " -> " + format_number(v);
  }
  std::optional<double>& m = width ? p.width_multiple : p.depth_multiple;
  const double old = m.value_or(1.0);
  m = next(old);
  return std::string(name) + "_multiple " + format_number(old) + " -> " + format_number(*m);
}

OperatorResult mock_result(OperatorKind kind, const ModelGenome& child, std::vector<std::string> parents,
                           BlockKind target, std::uint64_t seed, std::string edit) {
  OperatorResult r;
  r.kind = kind;
  r.target = target;
  r.mode = child.mode();
  r.child_text = serialize_genome(child);
  r.parent_fingerprints = std::move(parents);
  r.notes.push_back(edit);
  std::ostringstream t;
  t << "### operator: mock_" << to_string(kind) << "\n### mode: " << to_string(child.mode())
    << "\n### target: " << part_name(target) << "\n### parents:";
  for (const auto& p : r.parent_fingerprints) t << " " << p;
  t << "\n### seed: " << seed << "\n### edit: " << edit << "\n=== end ===\n";
  r.transcript = t.str();
  return r;
}

}  // namespace

std::string_view to_string(OperatorKind kind) { return kind == OperatorKind::Mutate ? "mutate" : "crossover"; }

std::optional<OperatorKind> operator_kind_from_string(std::string_view s) {
  if (s == "mutate") return OperatorKind::Mutate;
  if (s == "crossover") return OperatorKind::Crossover;
  return std::nullopt;
}

PromptSet PromptSet::defaults() {
  PromptSet p;
  p.persona.name = "yolo-architect";
  p.persona.system_prompt =
      "You are a senior computer-vision researcher who designs YOLO object detectors for autonomous driving. "
      "You understand how depth, width and module choice trade detection accuracy against model size and "
      "inference speed, and you edit Ultralytics model YAML files precisely.";
  p.mutate_ge1 =
      "{feedback}Below is the {target_part} section of a YOLO object-detection model configuration.\n\n"
      "{block}\n"
      "Modify this {target_part} section to improve the balance between detection accuracy (precision and "
      "recall) and cost (parameter count and inference time). You may change layers, repeats, channel widths "
      "or module arguments, but keep every layer reference valid. Return only the {target_part} section.\n\n"
      "{format_rules}\n";
  p.mutate_ge2 =
      "{feedback}Below is a complete YOLO object-detection model configuration.\n\n"
      "{whole_file}\n"
      "Modify the {target_part} of this configuration to improve the balance between detection accuracy "
      "(precision and recall) and cost (parameter count and inference time). Keep every layer reference valid. "
      "Return the complete configuration file.\n\n"
      "{format_rules}\n";
  p.crossover_ge1 =
      "{feedback}Below are the {target_part} sections of two YOLO object-detection model configurations.\n\n"
      "{block}\n"
      "Combine the strongest ideas of both into one new {target_part} section that balances detection accuracy "
      "against parameter count and inference time. Keep every layer reference valid. Return only the "
      "{target_part} section.\n\n"
      "{format_rules}\n";
  p.crossover_ge2 =
      "{feedback}Below are two complete YOLO object-detection model configurations.\n\n"
      "{whole_file}\n"
      "Combine the strongest ideas of both, focusing on the {target_part}, into one new configuration that "
      "balances detection accuracy against parameter count and inference time. Keep every layer reference "
      "valid. Return the complete configuration file.\n\n"
      "{format_rules}\n";
  p.feedback =
      "Feedback on the previous step: a {operator} produced the configuration below and it was {validity}. "
      "Change against its own parent: params {d_params}, cost {d_cost}, precision {d_precision}, recall "
      "{d_recall}. Use this to steer your next edit.\n\n";
  p.format_rules = default_format_rules();
  return p;
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("prompt directory not found: " + dir.string());
  PromptSet p = defaults();
  auto take = [&](const char* name, std::string& slot) {
    const auto path = dir / name;
    if (std::filesystem::exists(path)) slot = read_file(path);
  };
  if (const auto path = dir / "persona.txt"; std::filesystem::exists(path)) {
    const std::string text = read_file(path);
    const auto nl = text.find('\n');
    p.persona.name = text.substr(0, nl);
    p.persona.system_prompt = nl == std::string::npos ? "" : text.substr(nl + 1);
    if (p.persona.system_prompt.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw std::runtime_error("persona.txt has no system prompt after the name line");
    }
  }
  take("mutate_ge1.txt", p.mutate_ge1);
  take("mutate_ge2.txt", p.mutate_ge2);
  take("crossover_ge1.txt", p.crossover_ge1);
  take("crossover_ge2.txt", p.crossover_ge2);
  take("feedback.txt", p.feedback);
  take("format_rules.txt", p.format_rules);
  return p;
}

std::string render_feedback(const EotFeedback& fb, const PromptSet& prompts) {
  std::string text = prompts.feedback;
  text = replace_all(text, "{operator}", to_string(fb.op));
  text = replace_all(text, "{validity}", fb.valid ? "valid" : "invalid");
  text = replace_all(text, "{d_params}", signed_number(fb.d_params, 6));
  text = replace_all(text, "{d_cost}", signed_number(fb.d_cost, 6));
  text = replace_all(text, "{d_precision}", signed_number(fb.d_precision, 4));
  text = replace_all(text, "{d_recall}", signed_number(fb.d_recall, 4));
  return text;
}

CompletionRequest build_prompt(const std::vector<const ModelGenome*>& parents, BlockKind target,
                               const PromptSet& prompts, const std::optional<EotFeedback>& feedback,
                               GenomeMode mode, const PromptOptions& options) {
  if (parents.empty() || parents.size() > 2) throw std::invalid_argument("build_prompt takes one or two parents");
  for (const auto* p : parents) {
    if (p == nullptr || p->mode() != mode) throw GenomeError({DiagCode::ModeMismatch, "parent mode differs", {}, {}});
  }
  if (mode == GenomeMode::GE1 && target == BlockKind::Whole) {
    throw GenomeError({DiagCode::ModeMismatch, "GE1 prompts target a single block", {}, {}});
  }
  const bool crossover = parents.size() == 2;
  std::string block;
  std::string whole;
  auto embed = [&](const ModelGenome& g) {
    return mode == GenomeMode::GE1 ? fenced(serialize_block(find_block(g, target))) : fenced(serialize_genome(g));
  };
  std::string& slot = mode == GenomeMode::GE1 ? block : whole;
  if (crossover) {
    slot = "Parent A:\n" + embed(*parents[0]) + "\nParent B:\n" + embed(*parents[1]);
  } else {
    slot = embed(*parents[0]);
  }
  const std::string& tmpl = mode == GenomeMode::GE1 ? (crossover ? prompts.crossover_ge1 : prompts.mutate_ge1)
                                                    : (crossover ? prompts.crossover_ge2 : prompts.mutate_ge2);
  std::string text = tmpl;
  text = replace_all(text, "{feedback}", feedback ? render_feedback(*feedback, prompts) : "");
  text = replace_all(text, "{format_rules}", prompts.format_rules);
  text = replace_all(text, "{target_part}", part_name(target));
  text = replace_all(text, "{block}", block);
  text = replace_all(text, "{whole_file}", whole);

  CompletionRequest req;
  req.model = options.model;
  req.temperature = options.temperature;
  req.max_tokens = options.max_tokens;
  req.messages = {{"system", prompts.persona.system_prompt}, {"user", text}};
  return req;
}

std::string extract_yaml_payload(std::string_view response) {
  if (response.find_first_not_of(" \t\r\n") == std::string_view::npos) throw EmptyResponse();
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= response.size();) {
    const auto nl = response.find('\n', start);
    const auto end = nl == std::string_view::npos ? response.size() : nl;
    lines.push_back(response.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  auto is_fence = [](std::string_view line) {
    const auto p = line.find_first_not_of(" \t");
    return p != std::string_view::npos && line.substr(p, 3) == "```";
  };
  std::string body;
  const auto open = std::find_if(lines.begin(), lines.end(), is_fence);
  if (open == lines.end()) {
    body = std::string(response);
  } else {
    for (auto it = open + 1; it != lines.end() && !is_fence(*it); ++it) {
      body.append(*it);
      body += '\n';
    }
  }
  // Drop leading blank lines (indentation of the first content line is kept).
  std::size_t first = 0;
  while (first < body.size()) {
    const auto nl = body.find('\n', first);
    const std::string_view line(body.data() + first, (nl == std::string::npos ? body.size() : nl) - first);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos || nl == std::string::npos) break;
    first = nl + 1;
  }
  body.erase(0, first);
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.back()))) body.pop_back();
  return body;
}

OperatorResult llm_mutate(const ModelGenome& parent, BlockKind target, const LlmOperatorContext& ctx,
                          const std::optional<EotFeedback>& feedback) {
  return run_llm_operator(OperatorKind::Mutate, {&parent}, target, ctx, feedback);
}

OperatorResult llm_crossover(const ModelGenome& a, const ModelGenome& b, BlockKind target,
                             const LlmOperatorContext& ctx, const std::optional<EotFeedback>& feedback) {
  if (a.mode() != b.mode()) throw GenomeError({DiagCode::ModeMismatch, "crossover parents differ in mode", {}, {}});
  return run_llm_operator(OperatorKind::Crossover, {&a, &b}, target, ctx, feedback);
}

std::vector<LayerSpec> duplicate_layer(const std::vector<LayerSpec>& layers, std::size_t pos, int offset) {
  if (pos >= layers.size()) throw std::out_of_range("duplicate_layer position");
  const int p = offset + static_cast<int>(pos);
  auto remap = [p](int t) { return t < p ? t : t + 1; };
  std::vector<LayerSpec> out(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(pos) + 1);
  out.push_back(layers[pos]);
  for (std::size_t j = pos + 1; j < layers.size(); ++j) {
    LayerSpec l = layers[j];
    const int old_index = offset + static_cast<int>(j);
    const int new_index = old_index + 1;
    for (int& f : l.from) {
      const int t = f < 0 ? old_index + f : f;
      const int mapped = remap(t);
      f = f < 0 ? mapped - new_index : mapped;
    }
    out.push_back(std::move(l));
  }
  return out;
}

OperatorResult mock_mutate(const ModelGenome& parent, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  const std::string parent_fp = genome_fingerprint(parent);
  const auto sites = layer_sites(parent);
  auto layer_at = [&](const LayerSite& s) -> const LayerSpec& {
    return find_block(parent, s.block).layers[s.index];
  };

  std::vector<LayerSite> repeat_sites;
  std::vector<LayerSite> conv_sites;
  std::vector<LayerSite> bottleneck_sites;
  for (const auto& s : sites) {
    const LayerSpec& l = layer_at(s);
    if (!is_structural(l) && (l.repeats > 1 || l.module == "Bottleneck" || l.module == "C2f")) {
      repeat_sites.push_back(s);
    }
    if (l.module == "Conv" && !l.args.empty() && l.args[0].is_int()) conv_sites.push_back(s);
    if (l.module == "Bottleneck") bottleneck_sites.push_back(s);
  }
  enum Edit { Width, Depth, Repeats, Channel, Duplicate };
  std::vector<Edit> edits{Width, Depth};
  if (!repeat_sites.empty()) edits.push_back(Repeats);
  if (!conv_sites.empty()) edits.push_back(Channel);
  if (!bottleneck_sites.empty()) edits.push_back(Duplicate);

  const Edit edit = edits[pick(rng, edits.size())];
  const double factor = coin(rng) ? 1.25 : 0.75;
  const BlockKind params_kind = parent.mode() == GenomeMode::GE1 ? BlockKind::Parameters : BlockKind::Whole;

  if (edit == Width || edit == Depth) {
    Block b = find_block(parent, params_kind);
    const std::string what = scale_multiplier(*b.params, edit == Width, factor);
    return mock_result(OperatorKind::Mutate, parent.with_block(b), {parent_fp}, params_kind, rng_seed, what);
  }

  const auto& pool = edit == Repeats ? repeat_sites : edit == Channel ? conv_sites : bottleneck_sites;
  const LayerSite site = pool[pick(rng, pool.size())];
  Block b = find_block(parent, site.block);
  const int global = site.offset + static_cast<int>(site.index);
  std::string what;
  if (edit == Repeats) {
    LayerSpec& l = b.layers[site.index];
    const int old = l.repeats;
    l.repeats = (old > 1 && factor < 1.0) ? old - 1 : old + 1;
    what = "layer " + std::to_string(global) + " repeats " + std::to_string(old) + " -> " + std::to_string(l.repeats);
  } else if (edit == Channel) {
    LayerSpec& l = b.layers[site.index];
    const std::int64_t old = l.args[0].as_int();
    auto snap = [old](double f) {
      return std::max<std::int64_t>(8, std::llround(static_cast<double>(old) * f / 8.0) * 8);
    };
    std::int64_t c = snap(factor);
    if (c == old) c = snap(factor > 1.0 ? 0.75 : 1.25);
    l.args[0].value = c;
    what = "layer " + std::to_string(global) + " Conv channels " + std::to_string(old) + " -> " + std::to_string(c);
  } else {
    b.layers = duplicate_layer(b.layers, site.index, site.offset);
    if (site.block == BlockKind::Whole && site.index < b.backbone_size) ++b.backbone_size;
    what = "duplicated Bottleneck layer " + std::to_string(global);
  }
  return mock_result(OperatorKind::Mutate, parent.with_block(b), {parent_fp}, site.block, rng_seed, what);
}

OperatorResult mock_crossover(const ModelGenome& a, const ModelGenome& b, std::uint64_t rng_seed) {
  if (a.mode() != b.mode()) throw GenomeError({DiagCode::ModeMismatch, "crossover parents differ in mode", {}, {}});
  std::mt19937_64 rng(rng_seed);
  std::vector<std::string> parents{genome_fingerprint(a), genome_fingerprint(b)};

  if (a.mode() == GenomeMode::GE1) {
    std::vector<Block> blocks;
    std::string pattern;
    for (std::size_t i = 0; i < a.blocks().size(); ++i) {
      const bool from_b = coin(rng);
      blocks.push_back(from_b ? b.blocks()[i] : a.blocks()[i]);
      pattern += (i ? "," : "");
      pattern += from_b ? "b" : "a";
    }
    return mock_result(OperatorKind::Crossover, merge_blocks(std::move(blocks)), std::move(parents), BlockKind::Whole,
                       rng_seed, "blocks " + pattern);
  }

  const Block& wa = a.blocks().front();
  const Block& wb = b.blocks().front();
  const std::size_t shortest = std::min(wa.layers.size(), wb.layers.size());
  if (shortest < 2) {
    return mock_result(OperatorKind::Crossover, a, std::move(parents), BlockKind::Whole, rng_seed, "too short, copy a");
  }
  const std::size_t k = 1 + pick(rng, shortest - 1);
  Block child = wa;
  child.layers.assign(wa.layers.begin(), wa.layers.begin() + static_cast<std::ptrdiff_t>(k));
  child.layers.insert(child.layers.end(), wb.layers.begin() + static_cast<std::ptrdiff_t>(k), wb.layers.end());
  child.backbone_size = k >= wa.backbone_size ? wa.backbone_size : std::max(k, wb.backbone_size);
  return mock_result(OperatorKind::Crossover, ModelGenome(GenomeMode::GE2, {child}), std::move(parents),
                     BlockKind::Whole, rng_seed, "splice at layer " + std::to_string(k));
}

}  // namespace llmge
