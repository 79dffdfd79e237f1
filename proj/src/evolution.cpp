#include "llmge/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "json_io.hpp"

namespace llmge {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

double u01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::mt19937_64 generation_rng(std::uint64_t seed, int generation) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(generation)};
  return std::mt19937_64(seq);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// exception by index.
template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t t = 0; t < count; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

StaticEvalSettings static_settings(const RunConfig& cfg) {
  StaticEvalSettings s;
  if (!cfg.scale.empty()) s.build.scale = cfg.scale;
  s.input = {cfg.imgsz, cfg.imgsz};
  return s;
}

EvalOutcome evaluate(const ModelGenome& genome, const RunConfig& cfg) {
  const StaticEvalSettings s = static_settings(cfg);
  if (cfg.evaluator == EvaluatorKind::External) return external_evaluate(genome, cfg.results_path, s.build);
  return static_evaluate(genome, s);
}

std::vector<Point> min_points(const std::vector<Individual>& pop) {
  std::vector<Point> pts;
  for (const auto& ind : pop) {
    const auto v = minimization_vector(ind.outcome.objectives());
    pts.emplace_back(v.begin(), v.end());
  }
  return pts;
}

struct Ranking {
  std::vector<std::size_t> rank;
  std::vector<double> crowding;
};

Ranking rank_population(const std::vector<Individual>& pop) {
  const auto pts = min_points(pop);
  Ranking r{std::vector<std::size_t>(pop.size(), 0), std::vector<double>(pop.size(), 0.0)};
  const auto fronts = non_dominated_sort(pts);
  for (std::size_t f = 0; f < fronts.size(); ++f) {
    std::vector<Point> sub;
    for (auto i : fronts[f]) sub.push_back(pts[i]);
    const auto cd = crowding_distance(sub);
    for (std::size_t k = 0; k < fronts[f].size(); ++k) {
      r.rank[fronts[f][k]] = f;
      r.crowding[fronts[f][k]] = cd[k];
    }
  }
  return r;
}

// Elitist truncation by (rank, crowding), ties broken by position.
std::vector<Individual> truncate(std::vector<Individual> pool, std::size_t size) {
  if (pool.size() <= size) return pool;
  const auto pts = min_points(pool);
  std::vector<Individual> out;
  for (const auto& front : non_dominated_sort(pts)) {
    if (out.size() + front.size() <= size) {
      for (auto i : front) out.push_back(pool[i]);
      if (out.size() == size) break;
      continue;
    }
    std::vector<Point> sub;
    for (auto i : front) sub.push_back(pts[i]);
    const auto cd = crowding_distance(sub);
    std::vector<std::size_t> order(front.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cd[a] > cd[b]; });
    for (std::size_t k = 0; out.size() < size; ++k) out.push_back(pool[front[order[k]]]);
    break;
  }
  return out;
}

std::optional<EotFeedback> feedback_for(const Individual& parent, const std::map<std::string, const Individual*>& index) {
  if (parent.parents.empty() || !parent.outcome.is_valid()) return std::nullopt;
  const auto it = index.find(parent.parents.front());
  if (it == index.end() || !it->second->outcome.is_valid()) return std::nullopt;
  const auto& now = parent.outcome.objectives();
  const auto& before = it->second->outcome.objectives();
  EotFeedback fb;
  fb.op = parent.origin == "crossover" ? OperatorKind::Crossover : OperatorKind::Mutate;
  fb.valid = true;
  fb.d_params = static_cast<double>(now.params - before.params);
  fb.d_cost = now.cost - before.cost;
  fb.d_precision = now.precision - before.precision;
  fb.d_recall = now.recall - before.recall;
  return fb;
}

std::string fault_text(int generation, int slot) {
  return "# injected fault g" + std::to_string(generation) + " s" + std::to_string(slot) +
         "\nnc: 80\nbackbone:\n  - [-1, 1, Conv, [64, 3, 2]\nhead: [\n";
}

std::string_view block_name(BlockKind k) {
  switch (k) {
    case BlockKind::Parameters: return "parameters";
    case BlockKind::Backbone: return "backbone";
    case BlockKind::Head: return "head";
    case BlockKind::Whole: return "whole";
  }
  return "";
}

std::optional<BlockKind> block_from_name(std::string_view s) {
  if (s == "parameters") return BlockKind::Parameters;
  if (s == "backbone") return BlockKind::Backbone;
  if (s == "head") return BlockKind::Head;
  if (s == "whole") return BlockKind::Whole;
  return std::nullopt;
}

json individual_to_json(const Individual& ind) {
  json j;
  j["fingerprint"] = ind.fingerprint;
  j["generation"] = ind.generation;
  j["origin"] = ind.origin;
  j["backend"] = ind.backend;
  j["target"] = ind.target ? json(std::string(block_name(*ind.target))) : json(nullptr);
  j["parents"] = ind.parents;
  j["status"] = std::string(to_string(ind.status()));
  j["operator_failure"] = ind.operator_failure;
  j["diagnostics"] = json::array();
  if (ind.outcome.is_invalid()) {
    for (const auto& d : ind.outcome.diagnostics()) j["diagnostics"].push_back(detail::diagnostic_to_json(d));
  }
  j["objectives"] = ind.outcome.is_valid() ? detail::objectives_to_json(ind.outcome.objectives()) : json(nullptr);
  j["notes"] = ind.notes;
  return j;
}

json record_to_json(const GenerationRecord& r) {
  json j;
  j["gen"] = r.generation;
  j["produced"] = r.produced;
  j["valid"] = r.valid;
  j["invalid"] = r.invalid;
  j["pending"] = r.pending;
  j["duplicates"] = r.duplicates;
  j["operator_failures"] = r.operator_failures;
  j["archive"] = json::array();
  for (const auto& m : r.archive) {
    j["archive"].push_back(
        {{"fingerprint", m.fingerprint}, {"generation", m.generation}, {"objectives", detail::objectives_to_json(m.objectives)}});
  }
  j["population"] = r.population;
  j["elapsed_ms"] = r.elapsed_ms;
  return j;
}

GenerationRecord record_from_json(const json& j) {
  GenerationRecord r;
  r.generation = j.at("gen").get<int>();
  r.produced = j.at("produced").get<int>();
  r.valid = j.at("valid").get<int>();
  r.invalid = j.at("invalid").get<int>();
  r.pending = j.value("pending", 0);
  r.duplicates = j.at("duplicates").get<int>();
  r.operator_failures = j.value("operator_failures", 0);
  for (const auto& m : j.at("archive")) {
    r.archive.push_back({m.at("fingerprint").get<std::string>(), detail::objectives_from_json(m.at("objectives")), "",
                         m.value("generation", 0)});
  }
  r.population = j.at("population").get<std::vector<std::string>>();
  r.elapsed_ms = j.value("elapsed_ms", std::int64_t{0});
  return r;
}

// Lines that parse as JSON; a malformed final line (interrupted write) is
// dropped, a malformed earlier line is an error.
std::vector<json> read_jsonl_tolerant(const fs::path& path) {
  std::vector<json> rows;
  if (!fs::exists(path)) return rows;
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      rows.push_back(json::parse(lines[i]));
    } catch (const json::exception& e) {
      if (i + 1 == lines.size()) break;
      throw LogCorrupt(path.string(), static_cast<int>(i) + 1, e.what());
    }
  }
  return rows;
}

Individual individual_from_json(const json& j, const fs::path& run_dir, GenomeMode mode) {
  Individual ind;
  ind.fingerprint = j.at("fingerprint").get<std::string>();
  ind.generation = j.at("generation").get<int>();
  ind.origin = j.at("origin").get<std::string>();
  ind.backend = j.at("backend").get<std::string>();
  if (j.at("target").is_string()) ind.target = block_from_name(j["target"].get<std::string>());
  ind.parents = j.at("parents").get<std::vector<std::string>>();
  ind.operator_failure = j.value("operator_failure", false);
  ind.notes = j.value("notes", std::vector<std::string>{});
  const auto text_path = run_dir / "individuals" / (ind.fingerprint + ".yaml");
  if (fs::exists(text_path)) ind.text = read_text(text_path);
  const std::string status = j.at("status").get<std::string>();
  if (status == "valid") {
    ind.genome = parse_genome(ind.text, mode);
    ind.outcome = detail::objectives_from_json(j.at("objectives"));
  } else if (status == "pending") {
    ind.outcome = PendingOutcome{ind.fingerprint};
  } else {
    InvalidOutcome inv;
    for (const auto& d : j.at("diagnostics")) inv.diagnostics.push_back(detail::diagnostic_from_json(d));
    ind.outcome = inv;
  }
  return ind;
}

void persist_individual(const fs::path& run_dir, const Individual& ind, std::ofstream& index) {
  if (!ind.text.empty()) write_text(run_dir / "individuals" / (ind.fingerprint + ".yaml"), ind.text);
  if (!ind.transcript.empty()) write_text(run_dir / "transcripts" / (ind.fingerprint + ".txt"), ind.transcript);
  index << individual_to_json(ind).dump() << "\n";
}

std::string_view enum_name(EvaluatorKind k) { return k == EvaluatorKind::Static ? "static" : "external"; }
std::string_view enum_name(OperatorBackend k) { return k == OperatorBackend::Mock ? "mock" : "llm"; }
std::string_view enum_name(NormPolicy p) { return p == NormPolicy::WholeRun ? "whole-run" : "fixed-bounds"; }

template <class T>
T scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

std::string_view to_string(IndividualStatus s) {
  switch (s) {
    case IndividualStatus::Valid: return "valid";
    case IndividualStatus::Invalid: return "invalid";
    case IndividualStatus::Pending: return "pending";
  }
  return "";
}

IndividualStatus Individual::status() const {
  if (outcome.is_valid()) return IndividualStatus::Valid;
  if (outcome.is_pending()) return IndividualStatus::Pending;
  return IndividualStatus::Invalid;
}

SeedInvalid::SeedInvalid(const std::string& seed, std::vector<Diagnostic> diagnostics)
    : std::runtime_error("SeedInvalid: " + seed + (diagnostics.empty() ? "" : ": " + diagnostics.front().describe())),
      diagnostics_(std::move(diagnostics)) {}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML/JSON: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping");
  RunConfig cfg;
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    const YAML::Node& v = kv.second;
    if (key == "mode") {
      const auto m = genome_mode_from_string(scalar<std::string>(v, key));
      if (!m) throw ConfigError("mode must be GE1 or GE2");
      cfg.mode = *m;
    } else if (key == "seeds") {
      if (!v.IsSequence()) throw ConfigError("seeds must be a list of paths");
      for (const auto& s : v) cfg.seeds.push_back(resolve(base_dir, scalar<std::string>(s, key)));
    } else if (key == "population_size") {
      cfg.population_size = scalar<int>(v, key);
    } else if (key == "generations") {
      cfg.generations = scalar<int>(v, key);
    } else if (key == "offspring_per_generation") {
      cfg.offspring_per_generation = scalar<int>(v, key);
    } else if (key == "mutation_ratio") {
      cfg.mutation_ratio = scalar<double>(v, key);
    } else if (key == "evaluator") {
      const auto s = scalar<std::string>(v, key);
      if (s != "static" && s != "external") throw ConfigError("evaluator must be static or external");
      cfg.evaluator = s == "static" ? EvaluatorKind::Static : EvaluatorKind::External;
    } else if (key == "results_path") {
      cfg.results_path = resolve(base_dir, scalar<std::string>(v, key));
    } else if (key == "scale") {
      cfg.scale = v.IsNull() ? "" : scalar<std::string>(v, key);
    } else if (key == "imgsz") {
      cfg.imgsz = scalar<int>(v, key);
    } else if (key == "rng_seed") {
      cfg.rng_seed = scalar<std::uint64_t>(v, key);
    } else if (key == "normalization") {
      const auto s = scalar<std::string>(v, key);
      if (s != "whole-run" && s != "fixed-bounds") throw ConfigError("normalization must be whole-run or fixed-bounds");
      cfg.normalization = s == "whole-run" ? NormPolicy::WholeRun : NormPolicy::FixedBounds;
    } else if (key == "operators") {
      const auto s = scalar<std::string>(v, key);
      if (s != "mock" && s != "llm") throw ConfigError("operators must be mock or llm");
      cfg.operators = s == "mock" ? OperatorBackend::Mock : OperatorBackend::Llm;
    } else if (key == "prompt_dir") {
      cfg.prompt_dir = resolve(base_dir, scalar<std::string>(v, key));
    } else if (key == "feedback") {
      cfg.feedback = scalar<bool>(v, key);
    } else if (key == "fault_rate") {
      cfg.fault_rate = scalar<double>(v, key);
    } else if (key == "workers") {
      cfg.workers = scalar<int>(v, key);
    } else if (key == "llm") {
      if (!v.IsMap()) throw ConfigError("llm must be a mapping");
      for (const auto& lk : v) {
        const std::string k = lk.first.as<std::string>();
        const YAML::Node& lv = lk.second;
        if (k == "endpoint") cfg.llm.endpoint = scalar<std::string>(lv, k);
        else if (k == "model") cfg.llm.model = scalar<std::string>(lv, k);
        else if (k == "temperature") cfg.llm.temperature = scalar<double>(lv, k);
        else if (k == "max_tokens") cfg.llm.max_tokens = scalar<int>(lv, k);
        else if (k == "concurrency") cfg.llm.concurrency = scalar<int>(lv, k);
        else if (k == "api_key_env") cfg.llm.api_key_env = scalar<std::string>(lv, k);
        else if (k == "timeout_s") cfg.llm.timeout = std::chrono::seconds(scalar<int>(lv, k));
        else if (k == "max_attempts") cfg.llm.retry.max_attempts = scalar<int>(lv, k);
        else if (k == "base_delay_ms") cfg.llm.retry.base_delay = std::chrono::milliseconds(scalar<int>(lv, k));
        else if (k == "max_delay_ms") cfg.llm.retry.max_delay = std::chrono::milliseconds(scalar<int>(lv, k));
        else if (k == "backoff_multiplier") cfg.llm.retry.multiplier = scalar<double>(lv, k);
        else throw ConfigError("unknown llm config key '" + k + "'");
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, path.parent_path());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["mode"] = std::string(to_string(cfg.mode));
  j["seeds"] = json::array();
  for (const auto& s : cfg.seeds) j["seeds"].push_back(s.string());
  j["population_size"] = cfg.population_size;
  j["generations"] = cfg.generations;
  j["offspring_per_generation"] = cfg.offspring_per_generation;
  j["mutation_ratio"] = cfg.mutation_ratio;
  j["evaluator"] = std::string(enum_name(cfg.evaluator));
  j["results_path"] = cfg.results_path.string();
  j["scale"] = cfg.scale;
  j["imgsz"] = cfg.imgsz;
  j["rng_seed"] = cfg.rng_seed;
  j["normalization"] = std::string(enum_name(cfg.normalization));
  j["operators"] = std::string(enum_name(cfg.operators));
  j["prompt_dir"] = cfg.prompt_dir.string();
  j["feedback"] = cfg.feedback;
  j["fault_rate"] = cfg.fault_rate;
  j["workers"] = cfg.workers;
  j["llm"] = {{"endpoint", cfg.llm.endpoint},
              {"model", cfg.llm.model},
              {"temperature", cfg.llm.temperature},
              {"max_tokens", cfg.llm.max_tokens},
              {"concurrency", cfg.llm.concurrency},
              {"api_key_env", cfg.llm.api_key_env},
              {"timeout_s", cfg.llm.timeout.count()},
              {"max_attempts", cfg.llm.retry.max_attempts},
              {"base_delay_ms", cfg.llm.retry.base_delay.count()},
              {"max_delay_ms", cfg.llm.retry.max_delay.count()},
              {"backoff_multiplier", cfg.llm.retry.multiplier}};
  return j.dump(2);
}

void validate_config(const RunConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("at least one seed genome is required");
  if (cfg.population_size < 2) throw ConfigError("population_size must be >= 2");
  if (static_cast<std::size_t>(cfg.population_size) < cfg.seeds.size()) {
    throw ConfigError("population_size is smaller than the number of seeds");
  }
  if (cfg.generations < 1) throw ConfigError("generations must be >= 1");
  if (cfg.offspring_per_generation < 0) throw ConfigError("offspring_per_generation must be >= 0");
  if (!(cfg.mutation_ratio >= 0.0 && cfg.mutation_ratio <= 1.0)) throw ConfigError("mutation_ratio must be in [0,1]");
  if (!(cfg.fault_rate >= 0.0 && cfg.fault_rate <= 1.0)) throw ConfigError("fault_rate must be in [0,1]");
  if (cfg.imgsz < 32) throw ConfigError("imgsz must be >= 32");
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  if (cfg.evaluator == EvaluatorKind::External && cfg.results_path.empty()) {
    throw ConfigError("external evaluator needs results_path");
  }
}

std::vector<Individual> seed_population(const RunConfig& cfg) {
  validate_config(cfg);
  std::vector<Individual> pop;
  std::set<std::string> seen;
  for (const auto& path : cfg.seeds) {
    std::string text;
    try {
      text = read_text(path);
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
    const ValidityVerdict verdict = validate_genome(text, cfg.mode, static_settings(cfg).build);
    if (!verdict.valid) throw SeedInvalid(path.string(), verdict.diagnostics);
    Individual ind;
    ind.genome = parse_genome(text, cfg.mode);
    ind.text = serialize_genome(*ind.genome);
    ind.fingerprint = genome_fingerprint(*ind.genome);
    ind.notes.push_back("seed " + path.filename().string());
    if (!seen.insert(ind.fingerprint).second) continue;
    ind.outcome = evaluate(*ind.genome, cfg);
    if (ind.outcome.is_pending()) throw ConfigError("no results row for seed " + path.string());
    if (ind.outcome.is_invalid()) throw SeedInvalid(path.string(), ind.outcome.diagnostics());
    pop.push_back(std::move(ind));
  }
  const std::size_t n_seeds = pop.size();
  auto rng = generation_rng(cfg.rng_seed, 0);
  const std::size_t target = static_cast<std::size_t>(cfg.population_size);
  const std::size_t max_attempts = 50 * target;
  for (std::size_t attempt = 0; pop.size() < target && attempt < max_attempts; ++attempt) {
    const Individual& parent = pop[attempt % n_seeds];
    const std::uint64_t op_seed = rng();
    OperatorResult r = mock_mutate(*parent.genome, op_seed);
    ModelGenome child;
    try {
      child = parse_genome(r.child_text, cfg.mode);
    } catch (const GenomeError&) {
      continue;
    }
    const std::string fp = genome_fingerprint(child);
    if (seen.count(fp)) continue;
    EvalOutcome outcome = evaluate(child, cfg);
    if (!outcome.is_valid()) continue;
    seen.insert(fp);
    Individual ind;
    ind.genome = child;
    ind.text = r.child_text;
    ind.fingerprint = fp;
    ind.outcome = outcome;
    ind.parents = r.parent_fingerprints;
    ind.origin = "fill";
    ind.backend = "mock";
    ind.target = r.target;
    ind.notes = r.notes;
    ind.transcript = r.transcript;
    pop.push_back(std::move(ind));
  }
  return pop;
}

GenerationRecord evolve_generation(EvolutionState& state, const RunConfig& cfg, int generation,
                                   const EvolutionHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  auto rng = generation_rng(cfg.rng_seed, generation);
  auto& pop = state.population;
  if (pop.empty()) throw std::logic_error("evolve_generation needs a non-empty evaluated population");

  const Ranking ranking = rank_population(pop);
  auto tournament = [&]() {
    const std::size_t a = pick(rng, pop.size());
    const std::size_t b = pick(rng, pop.size());
    auto better = [&](std::size_t x, std::size_t y) {
      if (ranking.rank[x] != ranking.rank[y]) return ranking.rank[x] < ranking.rank[y];
      if (ranking.crowding[x] != ranking.crowding[y]) return ranking.crowding[x] > ranking.crowding[y];
      return x < y;
    };
    return better(b, a) ? b : a;
  };

  struct Plan {
    OperatorKind kind;
    std::size_t a;
    std::size_t b;
    BlockKind target;
    std::uint64_t seed;
    bool fault;
  };
  const int n_slots = cfg.offspring_per_generation > 0 ? cfg.offspring_per_generation : cfg.population_size;
  static constexpr BlockKind kTargets[] = {BlockKind::Parameters, BlockKind::Backbone, BlockKind::Head};
  std::vector<Plan> plans;
  for (int s = 0; s < n_slots; ++s) {
    Plan p{};
    p.kind = (pop.size() < 2 || u01(rng) < cfg.mutation_ratio) ? OperatorKind::Mutate : OperatorKind::Crossover;
    p.a = tournament();
    p.b = p.kind == OperatorKind::Crossover ? tournament() : p.a;
    p.target = kTargets[pick(rng, 3)];
    p.seed = rng();
    p.fault = cfg.fault_rate > 0.0 && u01(rng) < cfg.fault_rate;
    plans.push_back(p);
  }

  std::map<std::string, const Individual*> index;
  for (const auto& ind : state.history) index.emplace(ind.fingerprint, &ind);

  std::optional<LlmOperatorContext> llm_ctx;
  std::unique_ptr<LlmClient> owned_client;
  if (cfg.operators == OperatorBackend::Llm) {
    llm_ctx.emplace();
    if (!cfg.prompt_dir.empty()) llm_ctx->prompts = PromptSet::load(cfg.prompt_dir);
    llm_ctx->options = {cfg.llm.model, cfg.llm.temperature, cfg.llm.max_tokens};
    if (hooks.backend != nullptr) {
      llm_ctx->backend = hooks.backend;
    } else {
      owned_client = std::make_unique<LlmClient>(cfg.llm);
      llm_ctx->backend = owned_client.get();
    }
  }

  // Produce: operator output plus parse, per slot, in parallel.
  struct Produced {
    OperatorResult result;
    std::string backend;
    std::optional<ModelGenome> genome;
    std::vector<Diagnostic> parse_diagnostics;
    std::string fingerprint;
  };
  std::vector<Produced> produced(plans.size());
  const int workers = cfg.operators == OperatorBackend::Llm ? std::max(cfg.workers, cfg.llm.concurrency) : cfg.workers;
  parallel_for(plans.size(), workers, [&](std::size_t s) {
    const Plan& p = plans[s];
    Produced& out = produced[s];
    const Individual& a = pop[p.a];
    const Individual& b = pop[p.b];
    std::optional<OperatorResult> overridden;
    if (hooks.override_slot) overridden = hooks.override_slot(generation, static_cast<int>(s));
    if (overridden) {
      out.result = std::move(*overridden);
      out.backend = "fault";
    } else if (p.fault) {
      out.result.kind = p.kind;
      out.result.mode = cfg.mode;
      out.result.target = p.target;
      out.result.parent_fingerprints = {a.fingerprint};
      if (p.kind == OperatorKind::Crossover) out.result.parent_fingerprints.push_back(b.fingerprint);
      out.result.child_text = fault_text(generation, static_cast<int>(s));
      out.result.notes.push_back("injected malformed genome");
      out.backend = "fault";
    } else if (cfg.operators == OperatorBackend::Mock) {
      out.result = p.kind == OperatorKind::Mutate ? mock_mutate(*a.genome, p.seed)
                                                  : mock_crossover(*a.genome, *b.genome, p.seed);
      out.backend = "mock";
    } else {
      std::optional<EotFeedback> fb;
      if (cfg.feedback) fb = feedback_for(a, index);
      out.result = p.kind == OperatorKind::Mutate ? llm_mutate(*a.genome, p.target, *llm_ctx, fb)
                                                  : llm_crossover(*a.genome, *b.genome, p.target, *llm_ctx, fb);
      out.backend = "llm";
    }
    if (out.result.failed) return;
    try {
      out.genome = parse_genome(out.result.child_text, cfg.mode);
      out.fingerprint = genome_fingerprint(*out.genome);
    } catch (const GenomeError& e) {
      out.parse_diagnostics.push_back(e.diagnostic());
      out.fingerprint = raw_text_fingerprint(out.result.child_text);
    }
  });

  GenerationRecord rec;
  rec.generation = generation;
  std::vector<Individual> offspring;
  std::vector<std::size_t> to_evaluate;
  for (std::size_t s = 0; s < produced.size(); ++s) {
    Produced& p = produced[s];
    Individual ind;
    ind.generation = generation;
    ind.parents = p.result.parent_fingerprints;
    ind.origin = std::string(to_string(p.result.kind));
    ind.backend = p.backend;
    ind.target = p.result.target;
    ind.notes = p.result.notes;
    ind.transcript = p.result.transcript;
    ind.text = p.result.child_text;
    if (p.result.failed) {
      ind.fingerprint = "fail-g" + std::to_string(generation) + "-s" + std::to_string(s);
      ind.operator_failure = true;
      const std::string why = p.result.notes.empty() ? "operator failed" : p.result.notes.back();
      ind.outcome = InvalidOutcome{{Diagnostic{DiagCode::OperatorFailure, why, {}, {}}}};
      ++rec.operator_failures;
    } else {
      ind.fingerprint = p.fingerprint;
      if (!state.seen.insert(ind.fingerprint).second) {
        ++rec.duplicates;
        continue;
      }
      if (p.genome) {
        ind.genome = std::move(p.genome);
        to_evaluate.push_back(offspring.size());
      } else {
        ind.outcome = InvalidOutcome{p.parse_diagnostics};
      }
    }
    offspring.push_back(std::move(ind));
  }

  parallel_for(to_evaluate.size(), cfg.workers, [&](std::size_t k) {
    Individual& ind = offspring[to_evaluate[k]];
    ind.outcome = evaluate(*ind.genome, cfg);
  });

  std::vector<Individual> pool = pop;
  for (auto& ind : offspring) {
    switch (ind.status()) {
      case IndividualStatus::Valid:
        ++rec.valid;
        update_archive(state.archive, {ind.fingerprint, ind.outcome.objectives(), "", generation});
        pool.push_back(ind);
        break;
      case IndividualStatus::Invalid: ++rec.invalid; break;
      case IndividualStatus::Pending: ++rec.pending; break;
    }
  }
  rec.produced = rec.valid + rec.invalid + rec.pending;
  state.population = truncate(std::move(pool), static_cast<std::size_t>(cfg.population_size));
  for (auto& ind : offspring) state.history.push_back(std::move(ind));

  rec.archive = state.archive.members();
  for (const auto& ind : state.population) rec.population.push_back(ind.fingerprint);
  rec.elapsed_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<GenerationRecord> read_generation_records(const fs::path& run_dir) {
  const fs::path path = run_dir / "generations.jsonl";
  if (!fs::exists(path)) throw std::runtime_error("no generations.jsonl in " + run_dir.string());
  std::vector<GenerationRecord> out;
  const auto rows = read_jsonl_tolerant(path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      out.push_back(record_from_json(rows[i]));
    } catch (const json::exception& e) {
      throw LogCorrupt(path.string(), static_cast<int>(i) + 1, e.what());
    }
  }
  return out;
}

RunReport read_report(const fs::path& run_dir) {
  const json j = json::parse(read_text(run_dir / "report.json"));
  RunReport r;
  r.mode = j.at("mode").get<std::string>();
  r.generations = j.at("generations").get<int>();
  r.seed_count = j.at("seed_count").get<int>();
  r.population_size = j.at("population_size").get<int>();
  r.variants = j.at("variants").get<int>();
  r.invalid_variants = j.at("invalid_variants").get<int>();
  r.pending_variants = j.value("pending_variants", 0);
  r.invalid_fraction = j.at("invalid_fraction").get<double>();
  r.duplicates = j.at("duplicates").get<int>();
  r.operator_failures = j.value("operator_failures", 0);
  r.pareto_front_size = j.at("pareto_front_size").get<int>();
  r.runtime_seconds = j.at("runtime_seconds").get<double>();
  r.objective_source = j.at("objective_source").get<std::string>();
  r.synthetic = j.at("synthetic").get<bool>();
  if (j.contains("final_dominated_hv") && !j["final_dominated_hv"].is_null()) {
    r.final_dominated_hv = j["final_dominated_hv"].get<double>();
  }
  return r;
}

RunReport run_evolution(const RunConfig& cfg, const fs::path& run_dir, const RunOptions& options) {
  validate_config(cfg);
  fs::create_directories(run_dir / "individuals");
  fs::create_directories(run_dir / "transcripts");
  const fs::path ind_path = run_dir / "individuals.jsonl";
  const fs::path gen_path = run_dir / "generations.jsonl";

  EvolutionState state;
  std::vector<GenerationRecord> records;
  int seed_count = 0;

  bool restored = false;
  if (options.resume && fs::exists(gen_path)) {
    records = read_generation_records(run_dir);
    const int committed = static_cast<int>(records.size());
    for (int i = 0; i < committed; ++i) {
      if (records[static_cast<std::size_t>(i)].generation != i + 1) {
        throw LogCorrupt(gen_path.string(), i + 1, "generation numbers are not contiguous");
      }
    }
    if (committed > 0) {
      for (const auto& row : read_jsonl_tolerant(ind_path)) {
        if (row.at("generation").get<int>() > committed) continue;
        Individual ind = individual_from_json(row, run_dir, cfg.mode);
        if (ind.origin == "seed") ++seed_count;
        state.seen.insert(ind.fingerprint);
        state.history.push_back(std::move(ind));
      }
      std::map<std::string, const Individual*> by_fp;
      for (const auto& ind : state.history) by_fp.emplace(ind.fingerprint, &ind);
      for (const auto& fp : records.back().population) {
        const auto it = by_fp.find(fp);
        if (it == by_fp.end()) throw LogCorrupt(ind_path.string(), 0, "population member " + fp + " not logged");
        state.population.push_back(*it->second);
      }
      for (const auto& m : records.back().archive) update_archive(state.archive, m);
      // Drop anything written by the interrupted generation.
      std::ofstream idx(ind_path, std::ios::trunc);
      for (const auto& ind : state.history) idx << individual_to_json(ind).dump() << "\n";
      std::ofstream gens(gen_path, std::ios::trunc);
      for (const auto& r : records) gens << record_to_json(r).dump() << "\n";
      restored = true;
    } else {
      records.clear();
    }
  } else if (!options.resume && (fs::exists(gen_path) || fs::exists(ind_path))) {
    throw ConfigError("run directory " + run_dir.string() + " already holds a run; use resume");
  }

  write_text(run_dir / "config.json", run_config_to_json(cfg) + "\n");
  if (!restored) {
    state.population = seed_population(cfg);
    std::ofstream idx(ind_path, std::ios::trunc);
    std::ofstream(gen_path, std::ios::trunc);
    for (const auto& ind : state.population) {
      if (ind.origin == "seed") ++seed_count;
      state.seen.insert(ind.fingerprint);
      update_archive(state.archive, {ind.fingerprint, ind.outcome.objectives(), "", 0});
      persist_individual(run_dir, ind, idx);
      state.history.push_back(ind);
    }
  }

  int ran = 0;
  for (int gen = static_cast<int>(records.size()) + 1; gen <= cfg.generations; ++gen) {
    if (options.stop_after && ran >= *options.stop_after) break;
    const std::size_t before = state.history.size();
    GenerationRecord rec = evolve_generation(state, cfg, gen, options.hooks);
    {
      std::ofstream idx(ind_path, std::ios::app);
      for (std::size_t i = before; i < state.history.size(); ++i) persist_individual(run_dir, state.history[i], idx);
    }
    {
      std::ofstream gens(gen_path, std::ios::app);
      gens << record_to_json(rec).dump() << "\n";
    }
    if (options.on_generation) options.on_generation(rec);
    records.push_back(std::move(rec));
    ++ran;
  }

  RunReport report;
  report.mode = std::string(to_string(cfg.mode));
  report.generations = static_cast<int>(records.size());
  report.seed_count = seed_count;
  report.population_size = cfg.population_size;
  std::int64_t elapsed = 0;
  for (const auto& r : records) {
    report.variants += r.produced;
    report.invalid_variants += r.invalid;
    report.pending_variants += r.pending;
    report.duplicates += r.duplicates;
    report.operator_failures += r.operator_failures;
    elapsed += r.elapsed_ms;
  }
  report.invalid_fraction =
      report.variants > 0 ? static_cast<double>(report.invalid_variants) / static_cast<double>(report.variants) : 0.0;
  report.pareto_front_size = static_cast<int>(state.archive.size());
  report.runtime_seconds = static_cast<double>(elapsed) / 1000.0;
  report.objective_source = cfg.evaluator == EvaluatorKind::Static ? "static-surrogate" : "external";
  report.synthetic = cfg.evaluator == EvaluatorKind::Static;

  std::vector<ObjectiveVector> reference;
  for (const auto& ind : state.history) {
    const bool in_scope = cfg.normalization == NormPolicy::WholeRun || ind.generation == 0;
    if (in_scope && ind.outcome.is_valid()) reference.push_back(ind.outcome.objectives());
  }
  if (!reference.empty() && state.archive.size() > 0) {
    const Normalizer norm = fit_normalizer(reference, cfg.normalization);
    std::vector<Point> pts;
    for (const auto& m : state.archive.members()) pts.push_back(norm.transform(m.objectives));
    report.final_dominated_hv = hypervolume(pts);
  }

  if (report.generations == cfg.generations) {
    json j;
    j["mode"] = report.mode;
    j["generations"] = report.generations;
    j["seed_count"] = report.seed_count;
    j["population_size"] = report.population_size;
    j["variants"] = report.variants;
    j["invalid_variants"] = report.invalid_variants;
    j["pending_variants"] = report.pending_variants;
    j["invalid_fraction"] = report.invalid_fraction;
    j["duplicates"] = report.duplicates;
    j["operator_failures"] = report.operator_failures;
    j["pareto_front_size"] = report.pareto_front_size;
    j["runtime_seconds"] = report.runtime_seconds;
    j["objective_source"] = report.objective_source;
    j["synthetic"] = report.synthetic;
    j["normalization"] = std::string(enum_name(cfg.normalization));
    j["final_dominated_hv"] = report.final_dominated_hv ? json(*report.final_dominated_hv) : json(nullptr);
    j["final_paper_hv"] = report.final_dominated_hv ? json(1.0 - *report.final_dominated_hv) : json(nullptr);
    write_text(run_dir / "report.json", j.dump(2) + "\n");
  }
  return report;
}

}  // namespace llmge
