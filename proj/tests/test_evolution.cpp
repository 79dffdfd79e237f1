#include <doctest.h>

#include <atomic>
#include <set>

#include "llmge/evolution.hpp"
#include "support.hpp"

using namespace llmge;
using testing::listing;
using testing::slurp;
namespace fs = std::filesystem;

namespace {

RunConfig base_config(int population = 8, int generations = 3) {
  RunConfig cfg;
  cfg.seeds = {listing("yolov3_seed.yaml")};
  cfg.population_size = population;
  cfg.generations = generations;
  cfg.rng_seed = 42;
  return cfg;
}

std::vector<nlohmann::json> jsonl(const fs::path& path) {
  std::vector<nlohmann::json> rows;
  std::istringstream in(slurp(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  }
  return rows;
}

// Records without wall-clock fields.
std::vector<nlohmann::json> stable_records(const fs::path& run_dir) {
  auto rows = jsonl(run_dir / "generations.jsonl");
  for (auto& r : rows) r.erase("elapsed_ms");
  return rows;
}

// Rewrites the parameters block with a width multiple that differs per call.
class WidthBackend : public ChatBackend {
 public:
  Completion complete(const CompletionRequest& request) override {
    const int n = ++calls;
    const std::string& user = request.messages.back().content;
    Completion c;
    if (user.find("```yaml\nnc:") != std::string::npos) {
      c.text = "```yaml\nnc: 80\ndepth_multiple: 1.0\nwidth_multiple: " + std::to_string(0.25 + 0.01 * n) + "\n```";
    } else {
      c.text = "I would rather not.";  // not YAML for a layer block; child will be invalid
    }
    return c;
  }
  std::atomic<int> calls{0};
};

}  // namespace

TEST_CASE("run config parses YAML and JSON with path resolution and strict keys") {
  testing::TempDir dir;
  const RunConfig c = parse_run_config(
      "mode: GE2\nseeds: [a.yaml, /abs/b.yaml]\npopulation_size: 12\ngenerations: 4\nmutation_ratio: 0.5\n"
      "normalization: fixed-bounds\noperators: llm\nfault_rate: 0.1\nworkers: 2\n"
      "llm:\n  endpoint: http://h:1/v1\n  model: m\n  max_attempts: 5\n  base_delay_ms: 10\n  timeout_s: 3\n",
      dir.path());
  CHECK(c.mode == GenomeMode::GE2);
  CHECK(c.seeds[0] == dir.path() / "a.yaml");
  CHECK(c.seeds[1] == fs::path("/abs/b.yaml"));
  CHECK(c.population_size == 12);
  CHECK(c.normalization == NormPolicy::FixedBounds);
  CHECK(c.operators == OperatorBackend::Llm);
  CHECK(c.llm.endpoint == "http://h:1/v1");
  CHECK(c.llm.retry.max_attempts == 5);
  CHECK(c.llm.retry.base_delay == std::chrono::milliseconds(10));
  CHECK(c.llm.timeout == std::chrono::seconds(3));

  const RunConfig j = parse_run_config(R"({"seeds": ["s.yaml"], "generations": 2, "evaluator": "static"})");
  CHECK(j.generations == 2);
  CHECK(j.mode == GenomeMode::GE1);

  CHECK_THROWS_AS(parse_run_config("seeds: [a]\npopulaton_size: 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("llm: {temprature: 1}\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("mode: GE3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("generations: many\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[1, 2]"), ConfigError);

  RunConfig bad = base_config();
  bad.mutation_ratio = 1.5;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = base_config();
  bad.seeds.clear();
  CHECK_THROWS_AS(validate_config(bad), ConfigError);
  bad = base_config();
  bad.evaluator = EvaluatorKind::External;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  // The resolved config round-trips through its JSON form.
  const RunConfig again = parse_run_config(run_config_to_json(c));
  CHECK(again.seeds == c.seeds);
  CHECK(again.llm.retry.max_attempts == 5);
  CHECK(again.fault_rate == c.fault_rate);
}

TEST_CASE("a single seed is filled with valid, unique mock variants") {
  const RunConfig cfg = base_config(8);
  const auto pop = seed_population(cfg);
  REQUIRE(pop.size() == 8);
  CHECK(pop[0].origin == "seed");
  std::set<std::string> fps;
  for (const auto& ind : pop) {
    CHECK(ind.status() == IndividualStatus::Valid);
    fps.insert(ind.fingerprint);
  }
  CHECK(fps.size() == 8);
  for (std::size_t i = 1; i < pop.size(); ++i) {
    CHECK(pop[i].origin == "fill");
    CHECK(pop[i].parents == std::vector<std::string>{pop[0].fingerprint});
  }
  // Same seed, same population.
  const auto again = seed_population(cfg);
  for (std::size_t i = 0; i < pop.size(); ++i) CHECK(again[i].fingerprint == pop[i].fingerprint);
}

TEST_CASE("several seeds are all kept before filling") {
  RunConfig cfg = base_config(6);
  cfg.mode = GenomeMode::GE2;
  cfg.seeds = {listing("yolov3_seed.yaml"), listing("ge2_example1_prompt_log.yaml"),
               listing("ge2_example2_scales.yaml"), listing("ge2_example3_spp.yaml")};
  const auto pop = seed_population(cfg);
  REQUIRE(pop.size() == 6);
  for (int i = 0; i < 4; ++i) CHECK(pop[i].origin == "seed");
  CHECK(pop[4].origin == "fill");
  CHECK(pop[0].outcome.objectives().params == 103754144);
}

TEST_CASE("an invalid seed is refused with its diagnostics") {
  RunConfig cfg = base_config();
  cfg.seeds = {listing("yolov3_seed.yaml"), testing::fault("broken_from99.yaml")};
  try {
    seed_population(cfg);
    FAIL("expected SeedInvalid");
  } catch (const SeedInvalid& e) {
    REQUIRE_FALSE(e.diagnostics().empty());
    CHECK(e.diagnostics()[0].code == DiagCode::IndexOutOfRange);
    CHECK(std::string(e.what()).find("broken_from99.yaml") != std::string::npos);
  }
  cfg.seeds = {"/nonexistent/seed.yaml"};
  CHECK_THROWS_AS(seed_population(cfg), ConfigError);
}

TEST_CASE("mock run bookkeeping is consistent across records, logs and report") {
  testing::TempDir dir;
  RunConfig cfg = base_config(10, 4);
  cfg.fault_rate = 0.2;
  cfg.workers = 3;
  const RunReport report = run_evolution(cfg, dir.path());
  const auto records = read_generation_records(dir.path());
  REQUIRE(records.size() == 4);

  int produced = 0;
  int invalid = 0;
  for (const auto& r : records) {
    CHECK(r.produced == r.valid + r.invalid + r.pending);
    CHECK(r.pending == 0);
    CHECK(r.produced + r.duplicates == cfg.population_size);
    CHECK(r.population.size() == static_cast<std::size_t>(cfg.population_size));
    produced += r.produced;
    invalid += r.invalid;
  }
  CHECK(report.variants == produced);
  CHECK(report.invalid_variants == invalid);
  CHECK(report.invalid_fraction == doctest::Approx(static_cast<double>(invalid) / produced));
  CHECK(invalid > 0);
  CHECK(report.objective_source == "static-surrogate");
  CHECK(report.synthetic);
  REQUIRE(report.final_dominated_hv.has_value());

  const auto inds = jsonl(dir / "individuals.jsonl");
  CHECK(inds.size() == static_cast<std::size_t>(cfg.population_size + produced));
  std::set<std::string> fps;
  for (const auto& row : inds) {
    fps.insert(row["fingerprint"].get<std::string>());
    CHECK(fs::exists(dir / ("individuals/" + row["fingerprint"].get<std::string>() + ".yaml")));
    if (row["backend"] == "fault") {
      CHECK(row["status"] == "invalid");
      CHECK_FALSE(row["diagnostics"].empty());
    }
  }
  CHECK(fps.size() == inds.size());

  // The archive in each record is mutually non-dominated.
  for (const auto& r : records) {
    for (const auto& a : r.archive) {
      for (const auto& b : r.archive) {
        CHECK_FALSE(dominates(minimization_vector(a.objectives), minimization_vector(b.objectives)));
      }
    }
  }

  const RunReport saved = read_report(dir.path());
  CHECK(saved.variants == report.variants);
  CHECK(saved.pareto_front_size == report.pareto_front_size);
  CHECK(*saved.final_dominated_hv == doctest::Approx(*report.final_dominated_hv));

  CHECK_THROWS_AS(run_evolution(cfg, dir.path()), ConfigError);
}

TEST_CASE("an interrupted run resumes to the same result") {
  RunConfig cfg = base_config(8, 5);
  cfg.fault_rate = 0.1;
  testing::TempDir full;
  run_evolution(cfg, full.path());

  testing::TempDir part;
  RunOptions stop;
  stop.stop_after = 2;
  run_evolution(cfg, part.path(), stop);
  CHECK(read_generation_records(part.path()).size() == 2);
  CHECK_FALSE(fs::exists(part / "report.json"));
  // A torn trailing line from the killed process is tolerated.
  std::ofstream(part / "individuals.jsonl", std::ios::app) << "{\"fingerprint\": \"trunc";

  RunOptions resume;
  resume.resume = true;
  run_evolution(cfg, part.path(), resume);
  CHECK(stable_records(part.path()) == stable_records(full.path()));
  CHECK(jsonl(part / "individuals.jsonl") == jsonl(full / "individuals.jsonl"));
  CHECK(read_report(part.path()).variants == read_report(full.path()).variants);
}

TEST_CASE("resume discards individuals from an uncommitted generation") {
  RunConfig cfg = base_config(6, 3);
  testing::TempDir full;
  run_evolution(cfg, full.path());

  testing::TempDir part;
  RunOptions stop;
  stop.stop_after = 2;
  run_evolution(cfg, part.path(), stop);
  // Simulate a crash after generation 2's individuals were logged but before its record.
  const auto rows = jsonl(part / "generations.jsonl");
  std::ofstream(part / "generations.jsonl", std::ios::trunc) << rows[0].dump() << "\n";

  RunOptions resume;
  resume.resume = true;
  run_evolution(cfg, part.path(), resume);
  CHECK(stable_records(part.path()) == stable_records(full.path()));
  CHECK(jsonl(part / "individuals.jsonl") == jsonl(full / "individuals.jsonl"));
}

TEST_CASE("every slot faulty gives an all-invalid run") {
  testing::TempDir dir;
  RunConfig cfg = base_config(4, 2);
  cfg.fault_rate = 1.0;
  const RunReport r = run_evolution(cfg, dir.path());
  CHECK(r.variants == 8);
  CHECK(r.invalid_variants == 8);
  CHECK(r.invalid_fraction == 1.0);
  CHECK(r.duplicates == 0);
}

TEST_CASE("external evaluator leaves unscored offspring pending") {
  testing::TempDir dir;
  RunConfig cfg = base_config(4, 2);
  cfg.evaluator = EvaluatorKind::External;
  cfg.results_path = dir / "results.jsonl";
  // Rows for the seed and the fill variants only.
  const auto pop = seed_population([&] {
    RunConfig s = cfg;
    s.evaluator = EvaluatorKind::Static;
    return s;
  }());
  std::string rows;
  for (const auto& ind : pop) {
    rows += nlohmann::json{{"fingerprint", ind.fingerprint}, {"params", ind.outcome.objectives().params},
                           {"latency_ms", 5.0},            {"precision", 0.5},
                           {"recall", 0.5},                {"map50", 0.4},
                           {"map50_95", 0.2}}
                .dump() +
            "\n";
  }
  testing::spit(cfg.results_path, rows);
  const RunReport r = run_evolution(cfg, dir / "run");
  CHECK(r.objective_source == "external");
  CHECK_FALSE(r.synthetic);
  CHECK(r.pending_variants > 0);
  CHECK(r.variants == r.pending_variants + r.invalid_variants);
  for (const auto& rec : read_generation_records(dir / "run")) CHECK(rec.valid == 0);
}

TEST_CASE("LLM operators run through the backend hook and log transcripts") {
  testing::TempDir dir;
  RunConfig cfg = base_config(4, 2);
  cfg.operators = OperatorBackend::Llm;
  cfg.mutation_ratio = 1.0;
  WidthBackend backend;
  RunOptions opts;
  opts.hooks.backend = &backend;
  const RunReport r = run_evolution(cfg, dir.path(), opts);
  CHECK(backend.calls == 8);
  CHECK(r.variants + r.duplicates == 8);
  int transcripts = 0;
  for (const auto& row : jsonl(dir / "individuals.jsonl")) {
    if (row["backend"] != "llm") continue;
    const auto path = dir / ("transcripts/" + row["fingerprint"].get<std::string>() + ".txt");
    REQUIRE(fs::exists(path));
    const std::string t = slurp(path);
    CHECK(t.find("=== assistant ===\n") != std::string::npos);
    ++transcripts;
    if (row["target"] == "parameters") CHECK(row["status"] == "valid");
  }
  CHECK(transcripts == r.variants);
}

TEST_CASE("failed operator calls are counted, not thrown") {
  testing::TempDir dir;
  RunConfig cfg = base_config(4, 1);
  cfg.operators = OperatorBackend::Llm;
  RunOptions opts;
  opts.hooks.override_slot = [](int, int slot) -> std::optional<OperatorResult> {
    if (slot % 2 == 1) return std::nullopt;
    OperatorResult r;
    r.failed = true;
    r.notes = {"RateLimited: 429 after 3 attempts"};
    return r;
  };
  WidthBackend backend;
  opts.hooks.backend = &backend;
  const RunReport r = run_evolution(cfg, dir.path(), opts);
  CHECK(r.operator_failures == 2);
  CHECK(r.invalid_variants >= 2);
  const auto rec = read_generation_records(dir.path()).at(0);
  CHECK(rec.operator_failures == 2);
}
