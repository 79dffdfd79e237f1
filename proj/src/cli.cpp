#include "llmge/cli.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "json_io.hpp"
#include "llmge/arch_analysis.hpp"
#include "llmge/detection_metrics.hpp"
#include "llmge/evolution.hpp"
#include "llmge/moo_metrics.hpp"

namespace llmge {
namespace {

using nlohmann::json;

struct DomainError : std::runtime_error {
  DomainError(std::string code, const std::string& what, std::vector<Diagnostic> diags = {})
      : std::runtime_error(what), code(std::move(code)), diagnostics(std::move(diags)) {}
  std::string code;
  std::vector<Diagnostic> diagnostics;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("IoError", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GenomeMode parse_mode(const std::string& s) {
  const auto m = genome_mode_from_string(s);
  if (!m) throw CLI::ValidationError("--mode", "must be GE1 or GE2");
  return *m;
}

json error_json(const std::string& code, const std::string& message, const std::vector<Diagnostic>& diags) {
  json j{{"error", code}, {"message", message}, {"diagnostics", json::array()}};
  for (const auto& d : diags) j["diagnostics"].push_back(detail::diagnostic_to_json(d));
  return j;
}

json run_report_json(const RunReport& r) {
  json j{{"mode", r.mode},
         {"generations", r.generations},
         {"seed_count", r.seed_count},
         {"population_size", r.population_size},
         {"variants", r.variants},
         {"invalid_variants", r.invalid_variants},
         {"pending_variants", r.pending_variants},
         {"invalid_fraction", r.invalid_fraction},
         {"duplicates", r.duplicates},
         {"operator_failures", r.operator_failures},
         {"pareto_front_size", r.pareto_front_size},
         {"runtime_seconds", r.runtime_seconds},
         {"objective_source", r.objective_source},
         {"synthetic", r.synthetic}};
  j["final_dominated_hv"] = r.final_dominated_hv ? json(*r.final_dominated_hv) : json(nullptr);
  return j;
}

json cost_report_json(const ModelGenome& genome, const ArchGraph& graph, const CostReport& costs, SpatialSize input) {
  json j;
  j["fingerprint"] = genome_fingerprint(genome);
  j["layers"] = graph.nodes.size();
  j["nc"] = graph.nc;
  j["scale"] = graph.scale;
  j["depth_multiple"] = graph.depth;
  j["width_multiple"] = graph.width;
  j["imgsz"] = {input.height, input.width};
  j["total_params"] = costs.total_params;
  j["macs"] = costs.cost_units;
  j["gflops"] = 2.0 * costs.cost_units / 1e9;
  j["detect_inputs"] = graph.detect_inputs;
  j["head_strides"] = graph.head_strides();
  j["per_layer"] = json::array();
  for (const auto& l : costs.per_layer) {
    j["per_layer"].push_back({{"index", l.index},
                              {"module", l.module},
                              {"params", l.params},
                              {"macs", l.macs},
                              {"out_channels", l.out_channels},
                              {"out_size", {l.out_size.height, l.out_size.width}}});
  }
  return j;
}

json metrics_json(const DetMetrics& m) {
  json j{{"map50", m.map50},
         {"map50_95", m.map50_95},
         {"precision", m.precision},
         {"recall", m.recall},
         {"empty_ground_truth", m.empty_ground_truth}};
  j["per_class"] = json::object();
  for (const auto& [cls, ap] : m.per_class) {
    j["per_class"][std::to_string(cls)] = {
        {"ap50", ap.ap50}, {"ap50_95", ap.ap50_95}, {"ground_truth", ap.ground_truth}, {"detections", ap.detections}};
  }
  return j;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LLM-guided evolution of YOLO architecture genomes", "llmge"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run an evolution");
  std::string cfg_path;
  std::string run_out;
  bool resume = false;
  std::optional<int> o_generations;
  std::optional<int> o_population;
  std::optional<std::uint64_t> o_seed;
  std::optional<int> o_workers;
  std::optional<double> o_fault;
  std::string o_operators;
  std::string o_endpoint;
  run->add_option("--config", cfg_path, "Run configuration (YAML or JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Run directory")->required();
  run->add_flag("--resume", resume, "Continue from the last completed generation");
  run->add_option("--generations", o_generations, "Override generations");
  run->add_option("--population", o_population, "Override population_size");
  run->add_option("--seed", o_seed, "Override rng_seed");
  run->add_option("--workers", o_workers, "Override workers");
  run->add_option("--fault-rate", o_fault, "Override fault_rate");
  run->add_option("--operators", o_operators, "Override operators (mock|llm)")->check(CLI::IsMember({"mock", "llm"}));
  run->add_option("--endpoint", o_endpoint, "Override llm.endpoint");

  // validate
  auto* validate = app.add_subcommand("validate", "Check a genome file");
  std::string v_file;
  std::string v_mode = "GE1";
  std::string v_scale;
  validate->add_option("file", v_file, "Genome YAML")->required();
  validate->add_option("--mode", v_mode, "GE1 or GE2");
  validate->add_option("--scale", v_scale, "Scale key");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Print the parameter and cost report");
  std::string a_file;
  std::string a_mode = "GE1";
  std::string a_scale;
  int a_imgsz = 640;
  analyze->add_option("file", a_file, "Genome YAML")->required();
  analyze->add_option("--mode", a_mode, "GE1 or GE2");
  analyze->add_option("--scale", a_scale, "Scale key");
  analyze->add_option("--imgsz", a_imgsz, "Square input size")->check(CLI::PositiveNumber);

  // score
  auto* score = app.add_subcommand("score", "Score detections against KITTI labels");
  std::string s_dets;
  std::string s_gt;
  double s_conf = 0.0;
  score->add_option("--dets", s_dets, "Detections JSON lines")->required();
  score->add_option("--gt", s_gt, "KITTI label directory or file")->required();
  score->add_option("--conf", s_conf, "Confidence cutoff for precision/recall")->check(CLI::Range(0.0, 1.0));

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Export figure data from run directories");
  std::vector<std::string> m_runs;
  std::string m_out;
  bool m_joint = false;
  metrics->add_option("--runs", m_runs, "Run directories")->required()->expected(1, -1);
  metrics->add_option("--out", m_out, "Output directory (default <first run>/figures)");
  metrics->add_flag("--joint", m_joint, "One normalizer across all runs");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (run->parsed()) {
      RunConfig cfg = load_run_config(cfg_path);
      if (o_generations) cfg.generations = *o_generations;
      if (o_population) cfg.population_size = *o_population;
      if (o_seed) cfg.rng_seed = *o_seed;
      if (o_workers) cfg.workers = *o_workers;
      if (o_fault) cfg.fault_rate = *o_fault;
      if (!o_operators.empty()) cfg.operators = o_operators == "mock" ? OperatorBackend::Mock : OperatorBackend::Llm;
      if (!o_endpoint.empty()) cfg.llm.endpoint = o_endpoint;
      RunOptions opts;
      opts.resume = resume;
      const RunReport report = run_evolution(cfg, run_out, opts);
      out << run_report_json(report).dump(2) << "\n";
      return 0;
    }
    if (validate->parsed()) {
      BuildOptions build;
      if (!v_scale.empty()) build.scale = v_scale;
      const ValidityVerdict verdict = validate_genome(read_file(v_file), parse_mode(v_mode), build);
      if (verdict.valid) {
        out << "valid\n";
        return 0;
      }
      out << "invalid\n";
      for (const auto& d : verdict.diagnostics) out << d.describe() << "\n";
      const std::string code = verdict.diagnostics.empty() ? "Invalid" : std::string(to_string(verdict.diagnostics.front().code));
      err << error_json(code, "genome is invalid", verdict.diagnostics).dump() << "\n";
      return 1;
    }
    if (analyze->parsed()) {
      BuildOptions build;
      if (!a_scale.empty()) build.scale = a_scale;
      const ModelGenome genome = parse_genome(read_file(a_file), parse_mode(a_mode));
      const ArchGraph graph = build_graph(genome, build);
      const SpatialSize input{a_imgsz, a_imgsz};
      out << cost_report_json(genome, graph, analyze_costs(graph, input), input).dump(2) << "\n";
      return 0;
    }
    if (score->parsed()) {
      EvalSettings settings;
      settings.confidence_cutoff = s_conf;
      const auto dets = load_detections_jsonl(s_dets);
      const auto gts = load_kitti_labels(s_gt);
      out << metrics_json(evaluate_detections(dets, gts, settings)).dump(2) << "\n";
      return 0;
    }
    if (metrics->parsed()) {
      std::vector<std::filesystem::path> runs(m_runs.begin(), m_runs.end());
      const std::filesystem::path dest = m_out.empty() ? runs.front() / "figures" : std::filesystem::path(m_out);
      ExportOptions opts;
      opts.joint_normalization = m_joint;
      const ExportSummary summary = export_run_metrics(runs, dest, opts);
      json j{{"out", dest.string()}, {"generation_rows", summary.generations_rows}, {"front_rows", summary.front_rows}};
      j["files"] = json::array();
      for (const auto& f : summary.files) j["files"].push_back(f.string());
      out << j.dump(2) << "\n";
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    err << error_json(e.code, e.what(), e.diagnostics).dump() << "\n";
    return 1;
  } catch (const GenomeError& e) {
    err << error_json(std::string(to_string(e.code())), e.what(), {e.diagnostic()}).dump() << "\n";
    return 1;
  } catch (const SeedInvalid& e) {
    err << error_json("SeedInvalid", e.what(), e.diagnostics()).dump() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << error_json("ConfigError", e.what(), {}).dump() << "\n";
    return 1;
  } catch (const LogCorrupt& e) {
    err << error_json("LogCorrupt", e.what(), {}).dump() << "\n";
    return 1;
  } catch (const KittiFormatError& e) {
    err << error_json("MalformedLine", e.what(), {}).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << error_json("Error", e.what(), {}).dump() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace llmge
