#include "llmge/arch_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace llmge {
namespace {

constexpr std::int64_t kRegMax = 16;

[[noreturn]] void fail(DiagCode code, int layer, std::string message) {
  throw GenomeError(Diagnostic{code, std::move(message), layer, std::nullopt});
}

enum class InputArity { Single, Multi };

// Signature of a supported module token: argument count bounds, input arity,
// and whether args[0] is a width-scaled channel count.
struct ModuleSig {
  std::string_view name;
  std::size_t min_args;
  std::size_t max_args;
  InputArity inputs;
  bool channel_arg;      // args[0] is c_out and gets width scaling
  bool repeat_inserted;  // repeats become an internal argument (module built once)
};

constexpr ModuleSig kModules[] = {
    {"Conv", 1, 6, InputArity::Single, true, false},
    {"Bottleneck", 1, 3, InputArity::Single, true, false},
    {"SPP", 1, 2, InputArity::Single, true, false},
    {"SPPF", 1, 2, InputArity::Single, true, false},
    {"C2f", 1, 4, InputArity::Single, true, true},
    {"SCDown", 3, 3, InputArity::Single, true, false},
    {"PSA", 1, 2, InputArity::Single, true, false},
    {"Concat", 0, 1, InputArity::Multi, false, false},
    {"nn.Upsample", 2, 3, InputArity::Single, false, false},
    {"Detect", 1, 1, InputArity::Multi, false, false},
    {"v10Detect", 1, 1, InputArity::Multi, false, false},
};

const ModuleSig* find_sig(std::string_view name) {
  for (const auto& sig : kModules) {
    if (sig.name == name) return &sig;
  }
  return nullptr;
}

// ---- argument access -------------------------------------------------------

std::int64_t int_arg(const GraphNode& n, std::size_t i, std::int64_t fallback, std::string_view what) {
  if (i >= n.args.size()) return fallback;
  const ArgValue& a = n.args[i];
  if (a.is_int()) return a.as_int();
  if (a.is_string() && a.as_string() == "None") return fallback;
  fail(DiagCode::BadArgs, n.index, std::string(what) + " must be an integer");
}

std::optional<std::int64_t> optional_int_arg(const GraphNode& n, std::size_t i, std::string_view what) {
  if (i >= n.args.size()) return std::nullopt;
  const ArgValue& a = n.args[i];
  if (a.is_string() && a.as_string() == "None") return std::nullopt;
  if (a.is_int()) return a.as_int();
  fail(DiagCode::BadArgs, n.index, std::string(what) + " must be an integer or None");
}

double float_arg(const GraphNode& n, std::size_t i, double fallback, std::string_view what) {
  if (i >= n.args.size()) return fallback;
  const ArgValue& a = n.args[i];
  if (a.is_number()) return a.as_number();
  fail(DiagCode::BadArgs, n.index, std::string(what) + " must be a number");
}

bool bool_arg(const GraphNode& n, std::size_t i, bool fallback, std::string_view what) {
  if (i >= n.args.size()) return fallback;
  const ArgValue& a = n.args[i];
  if (a.is_bool()) return a.as_bool();
  fail(DiagCode::BadArgs, n.index, std::string(what) + " must be a boolean");
}

// ---- per-module geometry ----------------------------------------------------

struct ConvGeom {
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t groups = 1;
  std::int64_t dilation = 1;
};

ConvGeom conv_geom(const GraphNode& n) {
  ConvGeom g;
  g.kernel = int_arg(n, 1, 1, "kernel");
  g.stride = int_arg(n, 2, 1, "stride");
  g.groups = int_arg(n, 4, 1, "groups");
  g.dilation = int_arg(n, 5, 1, "dilation");
  if (g.kernel < 1 || g.stride < 1 || g.groups < 1 || g.dilation < 1) {
    fail(DiagCode::BadArgs, n.index, "kernel, stride, groups and dilation must be positive");
  }
  const std::int64_t effective_k = g.dilation * (g.kernel - 1) + 1;
  g.pad = optional_int_arg(n, 3, "padding").value_or(effective_k / 2);
  if (g.pad < 0) fail(DiagCode::BadArgs, n.index, "padding must be non-negative");
  return g;
}

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t d = 1) {
  const std::int64_t span = in + 2 * p - d * (k - 1) - 1;
  return span < 0 ? 0 : span / s + 1;
}

SpatialSize conv_out(SpatialSize in, std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t d = 1) {
  return {conv_out_extent(in.height, k, s, p, d), conv_out_extent(in.width, k, s, p, d)};
}

double area(SpatialSize s) { return static_cast<double>(s.height) * static_cast<double>(s.width); }

// MACs of one conv unit evaluated at its output resolution.
double conv_macs(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t g, SpatialSize out) {
  return static_cast<double>(k * k * (c_in / g) * c_out) * area(out);
}

struct NodeEval {
  std::int64_t params = 0;
  double macs = 0.0;
  SpatialSize out;
};

struct PsaShape {
  std::int64_t c;
  std::int64_t heads;
  std::int64_t key_dim;
  std::int64_t head_dim;
  std::int64_t qkv;
};

PsaShape psa_shape(const GraphNode& n) {
  const double e = float_arg(n, 1, 0.5, "expansion");
  PsaShape s{};
  s.c = static_cast<std::int64_t>(static_cast<double>(n.in_channels[0]) * e);
  s.heads = std::max<std::int64_t>(s.c / 64, 1);
  s.head_dim = s.c / s.heads;
  s.key_dim = static_cast<std::int64_t>(static_cast<double>(s.head_dim) * 0.5);
  s.qkv = s.c + 2 * s.key_dim * s.heads;
  return s;
}

struct DetectShape {
  std::int64_t box;  // regression branch width
  std::int64_t cls;  // classification branch width
};

DetectShape detect_shape(const GraphNode& n, std::int64_t nc) {
  const std::int64_t ch0 = n.in_channels[0];
  return {std::max({std::int64_t{16}, ch0 / 4, kRegMax * 4}), std::max(ch0, std::min<std::int64_t>(nc, 100))};
}

std::int64_t detect_nc(const GraphNode& n, const ArchGraph& graph, std::optional<std::int64_t> nc) {
  if (n.symbolic_nc && nc) return *nc;
  if (n.symbolic_nc) return graph.nc;
  return n.args.at(0).as_int();
}

NodeEval evaluate_node(const GraphNode& n, const ArchGraph& graph, std::span<const SpatialSize> in_sizes,
                       std::optional<std::int64_t> nc_override) {
  NodeEval r;
  const std::string& m = n.module;
  const std::int64_t c1 = n.in_channels.empty() ? 0 : n.in_channels[0];
  const std::int64_t c2 = n.out_channels;
  const int reps = n.effective_repeats;
  const SpatialSize in = in_sizes.empty() ? SpatialSize{} : in_sizes[0];

  if (m == "Conv") {
    const ConvGeom g = conv_geom(n);
    SpatialSize cur = in;
    for (int i = 0; i < reps; ++i) {
      cur = conv_out(cur, g.kernel, g.stride, g.pad, g.dilation);
      r.params += conv_unit_params(c1, c2, g.kernel, g.groups);
      r.macs += conv_macs(c1, c2, g.kernel, g.groups, cur);
    }
    r.out = cur;
  } else if (m == "Bottleneck") {
    const std::int64_t groups = int_arg(n, 2, 1, "groups");
    const std::int64_t hidden = c2 / 2;
    r.params = reps * (conv_unit_params(c1, hidden, 3) + conv_unit_params(hidden, c2, 3, groups));
    r.macs = reps * (conv_macs(c1, hidden, 3, 1, in) + conv_macs(hidden, c2, 3, groups, in));
    r.out = in;
  } else if (m == "SPP" || m == "SPPF") {
    std::int64_t branches = 4;
    if (m == "SPP") branches = static_cast<std::int64_t>(n.args.size() > 1 ? n.args[1].as_list().size() : 3) + 1;
    const std::int64_t hidden = c1 / 2;
    r.params = reps * (conv_unit_params(c1, hidden, 1) + conv_unit_params(hidden * branches, c2, 1));
    r.macs = reps * (conv_macs(c1, hidden, 1, 1, in) + conv_macs(hidden * branches, c2, 1, 1, in));
    r.out = in;
  } else if (m == "C2f") {
    const double e = float_arg(n, 3, 0.5, "expansion");
    const std::int64_t groups = int_arg(n, 2, 1, "groups");
    const std::int64_t c = static_cast<std::int64_t>(static_cast<double>(c2) * e);
    const std::int64_t inner = reps;
    r.params = conv_unit_params(c1, 2 * c, 1) + conv_unit_params((2 + inner) * c, c2, 1) +
               inner * (conv_unit_params(c, c, 3) + conv_unit_params(c, c, 3, groups));
    r.macs = conv_macs(c1, 2 * c, 1, 1, in) + conv_macs((2 + inner) * c, c2, 1, 1, in) +
             inner * (conv_macs(c, c, 3, 1, in) + conv_macs(c, c, 3, groups, in));
    r.out = in;
  } else if (m == "SCDown") {
    const std::int64_t k = int_arg(n, 1, 1, "kernel");
    const std::int64_t s = int_arg(n, 2, 1, "stride");
    SpatialSize cur = in;
    for (int i = 0; i < reps; ++i) {
      const SpatialSize mid = cur;
      cur = conv_out(cur, k, s, k / 2);
      r.params += conv_unit_params(c1, c2, 1) + conv_unit_params(c2, c2, k, c2);
      r.macs += conv_macs(c1, c2, 1, 1, mid) + conv_macs(c2, c2, k, c2, cur);
    }
    r.out = cur;
  } else if (m == "PSA") {
    const PsaShape s = psa_shape(n);
    const double tokens = area(in);
    const std::int64_t attn_params = conv_unit_params(s.c, s.qkv, 1) + conv_unit_params(s.c, s.c, 1) +
                                     conv_unit_params(s.c, s.c, 3, s.c);
    const double attn_macs = conv_macs(s.c, s.qkv, 1, 1, in) + conv_macs(s.c, s.c, 1, 1, in) +
                             conv_macs(s.c, s.c, 3, s.c, in) +
                             static_cast<double>(s.heads * (s.key_dim + s.head_dim)) * tokens * tokens;
    const std::int64_t ffn_params = conv_unit_params(s.c, 2 * s.c, 1) + conv_unit_params(2 * s.c, s.c, 1);
    const double ffn_macs = conv_macs(s.c, 2 * s.c, 1, 1, in) + conv_macs(2 * s.c, s.c, 1, 1, in);
    r.params = reps * (conv_unit_params(c1, 2 * s.c, 1) + conv_unit_params(2 * s.c, c1, 1) + attn_params + ffn_params);
    r.macs = reps * (conv_macs(c1, 2 * s.c, 1, 1, in) + conv_macs(2 * s.c, c1, 1, 1, in) + attn_macs + ffn_macs);
    r.out = in;
  } else if (m == "Concat") {
    r.out = in;
  } else if (m == "nn.Upsample") {
    const double factor = std::pow(float_arg(n, 1, 2.0, "scale_factor"), reps);
    r.out = {static_cast<std::int64_t>(std::floor(static_cast<double>(in.height) * factor)),
             static_cast<std::int64_t>(std::floor(static_cast<double>(in.width) * factor))};
  } else if (m == "Detect" || m == "v10Detect") {
    const std::int64_t nc = detect_nc(n, graph, nc_override);
    const DetectShape d = detect_shape(n, nc);
    const bool v10 = m == "v10Detect";
    std::int64_t box_params = 0;
    std::int64_t cls_params = 0;
    for (std::size_t i = 0; i < n.in_channels.size(); ++i) {
      const std::int64_t x = n.in_channels[i];
      const SpatialSize at = i < in_sizes.size() ? in_sizes[i] : SpatialSize{};
      // DFL projection: softmax over reg_max bins, 4 sides per anchor.
      r.macs += static_cast<double>(4 * kRegMax) * area(at);
      box_params += conv_unit_params(x, d.box, 3) + conv_unit_params(d.box, d.box, 3) + d.box * 4 * kRegMax +
                    4 * kRegMax;
      r.macs += conv_macs(x, d.box, 3, 1, at) + conv_macs(d.box, d.box, 3, 1, at) +
                conv_macs(d.box, 4 * kRegMax, 1, 1, at);
      if (v10) {
        cls_params += conv_unit_params(x, x, 3, x) + conv_unit_params(x, d.cls, 1) +
                      conv_unit_params(d.cls, d.cls, 3, d.cls) + conv_unit_params(d.cls, d.cls, 1) + d.cls * nc + nc;
        r.macs += conv_macs(x, x, 3, x, at) + conv_macs(x, d.cls, 1, 1, at) + conv_macs(d.cls, d.cls, 3, d.cls, at) +
                  conv_macs(d.cls, d.cls, 1, 1, at) + conv_macs(d.cls, nc, 1, 1, at);
      } else {
        cls_params += conv_unit_params(x, d.cls, 3) + conv_unit_params(d.cls, d.cls, 3) + d.cls * nc + nc;
        r.macs += conv_macs(x, d.cls, 3, 1, at) + conv_macs(d.cls, d.cls, 3, 1, at) + conv_macs(d.cls, nc, 1, 1, at);
      }
    }
    // v10Detect carries a second (one-to-one) copy of both branches; only one
    // runs at inference. The frozen DFL projection (reg_max weights) counts.
    r.params = (v10 ? 2 : 1) * (box_params + cls_params) + kRegMax;
    r.out = in;
  }
  return r;
}

// ---- graph construction -----------------------------------------------------

ArgValue resolve_symbol(const ArgValue& a, std::int64_t nc) {
  if (a.is_string() && a.as_string() == "nc") return ArgValue{nc};
  if (a.is_list()) {
    ArgValue::List items;
    for (const auto& item : a.as_list()) items.push_back(resolve_symbol(item, nc));
    return ArgValue{std::move(items)};
  }
  return a;
}

void check_positive_channels(const GraphNode& n, std::int64_t c) {
  if (c <= 0) fail(DiagCode::BadArgs, n.index, "channel count must be positive");
}

void check_module_args(const GraphNode& n) {
  const std::string& m = n.module;
  const std::int64_t c1 = n.in_channels.empty() ? 0 : n.in_channels[0];
  const std::int64_t c2 = n.out_channels;
  if (m == "Conv") {
    const ConvGeom g = conv_geom(n);
    if (c1 % g.groups != 0 || c2 % g.groups != 0) fail(DiagCode::BadArgs, n.index, "groups must divide channels");
    if (n.args.size() > 6) fail(DiagCode::BadArgs, n.index, "too many Conv args");
  } else if (m == "Bottleneck") {
    bool_arg(n, 1, true, "shortcut");
    const std::int64_t g = int_arg(n, 2, 1, "groups");
    if (g < 1 || (c2 / 2) % g != 0 || c2 % g != 0) fail(DiagCode::BadArgs, n.index, "groups must divide channels");
  } else if (m == "SPP") {
    if (n.args.size() > 1) {
      const ArgValue& ks = n.args[1];
      if (!ks.is_list() || ks.as_list().empty()) fail(DiagCode::BadArgs, n.index, "SPP kernels must be a list");
      for (const auto& k : ks.as_list()) {
        if (!k.is_int() || k.as_int() < 1 || k.as_int() % 2 == 0) {
          fail(DiagCode::BadArgs, n.index, "SPP kernels must be positive odd integers");
        }
      }
    }
  } else if (m == "SPPF") {
    const std::int64_t k = int_arg(n, 1, 5, "kernel");
    if (k < 1 || k % 2 == 0) fail(DiagCode::BadArgs, n.index, "SPPF kernel must be a positive odd integer");
  } else if (m == "C2f") {
    bool_arg(n, 1, false, "shortcut");
    const double e = float_arg(n, 3, 0.5, "expansion");
    const std::int64_t g = int_arg(n, 2, 1, "groups");
    const auto c = static_cast<std::int64_t>(static_cast<double>(c2) * e);
    if (!(e > 0.0) || c < 1) fail(DiagCode::BadArgs, n.index, "C2f hidden width must be positive");
    if (g < 1 || c % g != 0) fail(DiagCode::BadArgs, n.index, "groups must divide hidden channels");
  } else if (m == "SCDown") {
    const std::int64_t k = int_arg(n, 1, 1, "kernel");
    const std::int64_t s = int_arg(n, 2, 1, "stride");
    if (k < 1 || s < 1) fail(DiagCode::BadArgs, n.index, "kernel and stride must be positive");
  } else if (m == "PSA") {
    if (c1 != c2) {
      fail(DiagCode::ChannelMismatch, n.index,
           "PSA needs equal input and output channels (" + std::to_string(c1) + " vs " + std::to_string(c2) + ")");
    }
    const PsaShape s = psa_shape(n);
    if (s.c < 1 || s.key_dim < 1) fail(DiagCode::BadArgs, n.index, "PSA attention width too small");
  } else if (m == "Concat") {
    if (!n.args.empty() && (!n.args[0].is_int() || n.args[0].as_int() != 1)) {
      fail(DiagCode::BadArgs, n.index, "Concat supports the channel dimension (1) only");
    }
  } else if (m == "nn.Upsample") {
    const ArgValue& size = n.args[0];
    if (!(size.is_string() && size.as_string() == "None")) {
      fail(DiagCode::BadArgs, n.index, "Upsample size must be None; use scale_factor");
    }
    if (!(float_arg(n, 1, 2.0, "scale_factor") > 0.0)) fail(DiagCode::BadArgs, n.index, "scale_factor must be positive");
    if (n.args.size() > 2 && !n.args[2].is_string()) fail(DiagCode::BadArgs, n.index, "mode must be a string");
  } else if (is_detect_module(m)) {
    const ArgValue& nc = n.args[0];
    if (!nc.is_int() || nc.as_int() < 1) fail(DiagCode::BadArgs, n.index, "class count must be a positive integer");
  }
}

double node_stride_factor(const GraphNode& n) {
  const std::string& m = n.module;
  if (m == "Conv") return std::pow(static_cast<double>(int_arg(n, 2, 1, "stride")), n.effective_repeats);
  if (m == "SCDown") return std::pow(static_cast<double>(int_arg(n, 2, 1, "stride")), n.effective_repeats);
  if (m == "nn.Upsample") return 1.0 / std::pow(float_arg(n, 1, 2.0, "scale_factor"), n.effective_repeats);
  return 1.0;
}

// Forward pass over spatial sizes; returns per-node output size.
std::vector<SpatialSize> propagate_sizes(const ArchGraph& graph, SpatialSize input,
                                         std::vector<NodeEval>* evals = nullptr,
                                         std::optional<std::int64_t> nc = {}) {
  std::vector<SpatialSize> sizes;
  sizes.reserve(graph.nodes.size());
  for (const auto& node : graph.nodes) {
    std::vector<SpatialSize> in_sizes;
    for (int src : node.inputs) in_sizes.push_back(src < 0 ? input : sizes.at(static_cast<std::size_t>(src)));
    NodeEval e = evaluate_node(node, graph, in_sizes, nc);
    sizes.push_back(e.out);
    if (evals) evals->push_back(e);
  }
  return sizes;
}

}  // namespace

std::vector<double> ArchGraph::head_strides() const {
  std::set<double> strides;
  for (int i : detect_inputs) strides.insert(nodes.at(static_cast<std::size_t>(i)).stride);
  return {strides.begin(), strides.end()};
}

std::int64_t make_divisible(double value, std::int64_t divisor) {
  return static_cast<std::int64_t>(std::ceil(value / static_cast<double>(divisor))) * divisor;
}

int scaled_repeats(int repeats, double depth) {
  if (repeats <= 1) return repeats;
  // nearbyint under the default rounding mode is round-half-to-even.
  return std::max(static_cast<int>(std::nearbyint(repeats * depth)), 1);
}

std::int64_t conv_unit_params(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel, std::int64_t groups) {
  return kernel * kernel * (c_in / groups) * c_out + 2 * c_out;
}

bool is_supported_module(std::string_view name) { return find_sig(name) != nullptr; }

std::vector<std::string_view> supported_modules() {
  std::vector<std::string_view> names;
  for (const auto& sig : kModules) names.push_back(sig.name);
  return names;
}

bool is_detect_module(std::string_view name) { return name == "Detect" || name == "v10Detect"; }

ArchGraph build_graph(const ModelGenome& genome, const BuildOptions& options) {
  const ParamsTable& params = genome.params();
  ArchGraph graph;
  graph.nc = params.nc;
  graph.input_channels = options.input_channels;
  graph.depth = params.depth_multiple.value_or(1.0);
  graph.width = params.width_multiple.value_or(1.0);
  if (!params.scales.empty()) {
    const ScaleRow* row = &params.scales.front();
    if (options.scale) {
      auto it = std::find_if(params.scales.begin(), params.scales.end(),
                             [&](const ScaleRow& r) { return r.key == *options.scale; });
      if (it == params.scales.end()) {
        throw GenomeError(Diagnostic{DiagCode::UnknownScale, "no scale row '" + *options.scale + "'", {}, {}});
      }
      row = &*it;
    }
    graph.depth = row->depth;
    graph.width = row->width;
    graph.max_channels = row->max_channels;
    graph.scale = row->key;
  }

  const auto layers = genome.layers();
  const int count = static_cast<int>(layers.size());
  for (int i = 0; i < count; ++i) {
    const LayerSpec& spec = layers[static_cast<std::size_t>(i)];
    const ModuleSig* sig = find_sig(spec.module);
    if (!sig) fail(DiagCode::UnknownModule, i, "unsupported module '" + spec.module + "'");

    GraphNode node;
    node.index = i;
    node.module = spec.module;
    node.repeats = spec.repeats;
    node.effective_repeats = scaled_repeats(spec.repeats, graph.depth);

    if (sig->inputs == InputArity::Single && spec.from_is_list) {
      fail(DiagCode::BadArgs, i, spec.module + " takes a single input, got a list");
    }
    if (sig->inputs == InputArity::Multi && !spec.from_is_list) {
      fail(DiagCode::BadArgs, i, spec.module + " takes a list of inputs");
    }
    for (int f : spec.from) {
      const int resolved = f < 0 ? i + f : f;
      const bool image_input = i == 0 && f == -1;
      if (!image_input && (resolved < 0 || resolved >= i)) {
        fail(DiagCode::IndexOutOfRange, i,
             "from " + std::to_string(f) + " resolves to " + std::to_string(resolved) + " (valid: 0.." +
                 std::to_string(i - 1) + ")");
      }
      node.inputs.push_back(image_input ? -1 : resolved);
      node.in_channels.push_back(image_input ? graph.input_channels
                                             : graph.nodes[static_cast<std::size_t>(resolved)].out_channels);
    }

    if (spec.args.size() < sig->min_args || spec.args.size() > sig->max_args) {
      fail(DiagCode::BadArgs, i,
           spec.module + " expects " + std::to_string(sig->min_args) + ".." + std::to_string(sig->max_args) +
               " args, got " + std::to_string(spec.args.size()));
    }
    for (const auto& a : spec.args) node.args.push_back(resolve_symbol(a, graph.nc));
    if (is_detect_module(spec.module)) {
      node.symbolic_nc = spec.args[0].is_string() && spec.args[0].as_string() == "nc";
    }

    if (sig->channel_arg) {
      if (!node.args[0].is_int()) fail(DiagCode::BadArgs, i, "channel count must be an integer");
      std::int64_t c2 = node.args[0].as_int();
      check_positive_channels(node, c2);
      double capped = static_cast<double>(c2);
      if (graph.max_channels) capped = std::min(capped, static_cast<double>(*graph.max_channels));
      c2 = make_divisible(capped * graph.width, 8);
      node.args[0] = ArgValue{c2};
      node.out_channels = c2;
    } else if (spec.module == "Concat") {
      for (auto c : node.in_channels) node.out_channels += c;
    } else if (is_detect_module(spec.module)) {
      if (!node.args[0].is_int()) fail(DiagCode::BadArgs, i, "class count must be an integer");
      node.out_channels = node.args[0].as_int() + 4 * kRegMax;
    } else {
      node.out_channels = node.in_channels.at(0);
    }

    check_module_args(node);
    if (!sig->repeat_inserted && node.effective_repeats > 1 && node.in_channels[0] != node.out_channels &&
        spec.module != "nn.Upsample") {
      fail(DiagCode::ChannelMismatch, i,
           "repeated " + spec.module + " needs equal input and output channels (" +
               std::to_string(node.in_channels[0]) + " vs " + std::to_string(node.out_channels) + ")");
    }

    const double in_stride = node.inputs[0] < 0 ? 1.0 : graph.nodes[static_cast<std::size_t>(node.inputs[0])].stride;
    if (spec.module == "Concat") {
      for (int src : node.inputs) {
        const double s = src < 0 ? 1.0 : graph.nodes[static_cast<std::size_t>(src)].stride;
        if (s != in_stride) {
          fail(DiagCode::SpatialMismatch, i, "Concat inputs at different strides");
        }
      }
    }
    node.stride = in_stride * node_stride_factor(node);
    if (is_detect_module(spec.module)) {
      if (graph.detect_index) fail(DiagCode::DetectNotTerminal, i, "more than one detection head");
      graph.detect_index = i;
      graph.detect_inputs = node.inputs;
    }
    graph.nodes.push_back(std::move(node));
  }

  if (options.require_detect_head) {
    if (!graph.detect_index) throw GenomeError(Diagnostic{DiagCode::NoDetectHead, "no Detect-family layer", {}, {}});
    if (*graph.detect_index != count - 1) {
      fail(DiagCode::DetectNotTerminal, *graph.detect_index, "detection head must be the last layer");
    }
  }
  return graph;
}

ValidityVerdict validate_genome(const ModelGenome& genome, const BuildOptions& options) {
  try {
    build_graph(genome, options);
    return {true, {}};
  } catch (const GenomeError& e) {
    return {false, {e.diagnostic()}};
  }
}

ValidityVerdict validate_genome(std::string_view text, GenomeMode mode, const BuildOptions& options) {
  try {
    return validate_genome(parse_genome(text, mode), options);
  } catch (const GenomeError& e) {
    return {false, {e.diagnostic()}};
  }
}

std::int64_t node_params(const GraphNode& node, const ArchGraph& graph, std::optional<std::int64_t> nc) {
  return evaluate_node(node, graph, {}, nc).params;
}

std::int64_t count_parameters(const ArchGraph& graph, std::optional<std::int64_t> nc) {
  std::int64_t total = 0;
  for (const auto& node : graph.nodes) total += node_params(node, graph, nc);
  return total;
}

CostReport analyze_costs(const ArchGraph& graph, SpatialSize input) {
  std::vector<NodeEval> evals;
  const auto sizes = propagate_sizes(graph, input, &evals);
  CostReport report;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    report.per_layer.push_back(LayerCost{node.index, node.module, evals[i].params, evals[i].macs, node.out_channels,
                                         sizes[i]});
    report.total_params += evals[i].params;
    report.cost_units += evals[i].macs;
  }
  return report;
}

double estimate_inference_cost(const ArchGraph& graph, SpatialSize input) {
  return analyze_costs(graph, input).cost_units;
}

}  // namespace llmge
