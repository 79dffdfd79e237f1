#include <doctest.h>

#include <sstream>

#include "llmge/cli.hpp"
#include "support.hpp"

using namespace llmge;
using testing::listing;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("validate reports valid and invalid genomes with exit codes") {
  const CliResult ok = cli({"validate", listing("yolov3_seed.yaml").string()});
  CHECK(ok.code == 0);
  CHECK(ok.out == "valid\n");

  const CliResult bad = cli({"validate", testing::fault("unknown_module.yaml").string()});
  CHECK(bad.code == 1);
  CHECK(bad.out.rfind("invalid\n", 0) == 0);
  const auto err = nlohmann::json::parse(bad.err);
  CHECK(err["error"] == "UnknownModule");
  CHECK(err["diagnostics"][0]["layer"] == 6);

  const CliResult missing = cli({"validate", "/nonexistent.yaml"});
  CHECK(missing.code == 1);
  CHECK(nlohmann::json::parse(missing.err)["error"] == "IoError");
}

TEST_CASE("analyze prints the cost report") {
  const CliResult r = cli({"analyze", listing("yolov3_seed.yaml").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["total_params"] == 103754144);
  CHECK(j["macs"].get<double>() == doctest::Approx(141274854400.0));
  CHECK(j["gflops"].get<double>() == doctest::Approx(282.5497088));
  CHECK(j["fingerprint"] == "06a3e0e9299636f5");
  CHECK(j["per_layer"].size() == 29);
  CHECK(j["head_strides"] == nlohmann::json::array({8.0, 16.0, 32.0}));

  const CliResult ge2 = cli({"analyze", listing("ge2_example2_scales.yaml").string(), "--mode", "GE2", "--imgsz", "320"});
  REQUIRE(ge2.code == 0);
  CHECK(nlohmann::json::parse(ge2.out)["imgsz"] == nlohmann::json::array({320, 320}));
}

TEST_CASE("usage errors exit 2 and help exits 0") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"validate"}).code == 2);
  CHECK(cli({"validate", listing("yolov3_seed.yaml").string(), "--mode", "GE9"}).code == 2);
  const CliResult help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("llmge") != std::string::npos);
  CHECK(help.out.find("run") != std::string::npos);
}

TEST_CASE("score computes detection metrics from files") {
  testing::TempDir dir;
  testing::spit(dir / "gt/000001.txt", "Car 0 0 0 10 10 50 50\nPedestrian 0 0 0 100 100 120 160\n");
  testing::spit(dir / "dets.jsonl",
                "{\"image_id\": \"000001\", \"class_id\": 0, \"bbox\": [10, 10, 50, 50], \"confidence\": 0.9}\n"
                "{\"image_id\": \"000001\", \"class_id\": 3, \"bbox\": [300, 300, 320, 360], \"confidence\": 0.8}\n");
  const CliResult r = cli({"score", "--dets", (dir / "dets.jsonl").string(), "--gt", (dir / "gt").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["map50"].get<double>() == doctest::Approx(0.5));
  CHECK(j["precision"].get<double>() == doctest::Approx(0.5));
  CHECK(j["recall"].get<double>() == doctest::Approx(0.5));

  testing::spit(dir / "gt/000002.txt", "Car 0 0\n");
  const CliResult bad = cli({"score", "--dets", (dir / "dets.jsonl").string(), "--gt", (dir / "gt").string()});
  CHECK(bad.code == 1);
  CHECK(nlohmann::json::parse(bad.err)["error"] == "MalformedLine");
}

TEST_CASE("run then metrics end to end") {
  testing::TempDir dir;
  testing::spit(dir / "cfg.yaml", "seeds: [" + listing("yolov3_seed.yaml").string() +
                                      "]\npopulation_size: 6\ngenerations: 2\nrng_seed: 3\n");
  const CliResult r = cli({"run", "--config", (dir / "cfg.yaml").string(), "--out", (dir / "run").string(),
                           "--generations", "3", "--fault-rate", "0.25"});
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(r.out);
  CHECK(report["generations"] == 3);
  CHECK(report["synthetic"] == true);

  const CliResult again = cli({"run", "--config", (dir / "cfg.yaml").string(), "--out", (dir / "run").string()});
  CHECK(again.code == 1);
  CHECK(nlohmann::json::parse(again.err)["error"] == "ConfigError");

  const CliResult m = cli({"metrics", "--runs", (dir / "run").string()});
  REQUIRE(m.code == 0);
  const auto mj = nlohmann::json::parse(m.out);
  CHECK(mj["generation_rows"] == 3);
  CHECK(std::filesystem::exists(dir / "run/figures/hypervolume.csv"));

  testing::spit(dir / "bad.yaml", "seeds: [x]\nbogus: 1\n");
  const CliResult cfg_err = cli({"run", "--config", (dir / "bad.yaml").string(), "--out", (dir / "r2").string()});
  CHECK(cfg_err.code == 1);
  CHECK(nlohmann::json::parse(cfg_err.err)["error"] == "ConfigError");
}
