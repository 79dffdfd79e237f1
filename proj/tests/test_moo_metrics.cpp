#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "llmge/moo_metrics.hpp"
#include "support.hpp"

using namespace llmge;

namespace {

// Union of boxes [p, 1] by inclusion-exclusion over all subsets.
double inclusion_exclusion_hv(const std::vector<Point>& pts) {
  const std::size_t n = pts.size();
  double total = 0;
  for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
    const std::size_t d = pts.front().size();
    double vol = 1;
    for (std::size_t k = 0; k < d; ++k) {
      double hi = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1U << i)) hi = std::max(hi, pts[i][k]);
      }
      vol *= 1.0 - hi;
    }
    total += (std::popcount(mask) % 2 == 1 ? 1.0 : -1.0) * vol;
  }
  return total;
}

std::size_t brute_rank(const std::vector<Point>& pts, std::size_t i, std::vector<std::size_t>& memo) {
  if (memo[i] != std::numeric_limits<std::size_t>::max()) return memo[i];
  std::size_t r = 0;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (j != i && dominates(pts[j], pts[i])) r = std::max(r, brute_rank(pts, j, memo) + 1);
  }
  return memo[i] = r;
}

ObjectiveVector obj(std::int64_t params, double cost, double p, double r) {
  ObjectiveVector v;
  v.params = params;
  v.cost = cost;
  v.precision = p;
  v.recall = r;
  return v;
}

ArchiveMember member(const std::string& fp, ObjectiveVector v) { return {fp, v, "", 0}; }

}  // namespace

TEST_CASE("dominance") {
  const Point a{1, 2};
  const Point b{1, 3};
  CHECK(dominates(a, b));
  CHECK_FALSE(dominates(b, a));
  CHECK_FALSE(dominates(a, a));
  CHECK_FALSE(dominates(Point{0, 5}, Point{5, 0}));
  CHECK_THROWS_AS(dominates(Point{1, 2}, Point{1, 2, 3}), DimensionMismatch);
}

TEST_CASE("non-dominated sort agrees with longest dominance chains") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> coord(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    const std::size_t d = 2 + rng() % 3;
    std::vector<Point> pts(n, Point(d));
    for (auto& p : pts) {
      for (auto& x : p) x = coord(rng);
    }
    const auto fronts = non_dominated_sort(pts);
    std::vector<std::size_t> memo(n, std::numeric_limits<std::size_t>::max());
    std::size_t seen = 0;
    for (std::size_t f = 0; f < fronts.size(); ++f) {
      CHECK(std::is_sorted(fronts[f].begin(), fronts[f].end()));
      for (std::size_t i : fronts[f]) CHECK(brute_rank(pts, i, memo) == f);
      seen += fronts[f].size();
    }
    CHECK(seen == n);
  }
  CHECK(non_dominated_sort({}).empty());
}

TEST_CASE("crowding distance") {
  const auto two = crowding_distance({{0, 1}, {1, 0}});
  CHECK(std::isinf(two[0]));
  CHECK(std::isinf(two[1]));

  const auto d = crowding_distance({{0, 4}, {1, 3}, {3, 1}, {4, 0}});
  CHECK(std::isinf(d[0]));
  CHECK(std::isinf(d[3]));
  CHECK(d[1] == doctest::Approx(3.0 / 4 + 3.0 / 4));
  CHECK(d[2] == doctest::Approx(3.0 / 4 + 3.0 / 4));

  // A flat objective contributes nothing.
  const auto flat = crowding_distance({{0, 7}, {1, 7}, {2, 7}});
  CHECK(flat[1] == doctest::Approx(1.0));
}

TEST_CASE("archive keeps exactly the non-dominated, unique members") {
  ParetoArchive ar;
  CHECK(update_archive(ar, member("a", obj(100, 10, 0.5, 0.5))));
  CHECK_FALSE(update_archive(ar, member("a", obj(1, 1, 0.9, 0.9))));       // duplicate fingerprint
  CHECK_FALSE(update_archive(ar, member("b", obj(200, 20, 0.4, 0.4))));    // dominated
  CHECK(update_archive(ar, member("c", obj(50, 20, 0.5, 0.5))));           // trade-off
  CHECK(ar.size() == 2);
  CHECK(update_archive(ar, member("d", obj(40, 5, 0.6, 0.6))));            // dominates both
  CHECK(ar.size() == 1);
  CHECK(ar.contains("d"));
  CHECK_FALSE(ar.contains("a"));
  CHECK(update_archive(ar, member("e", obj(40, 5, 0.6, 0.6))));            // equal objectives: non-dominated
  CHECK(ar.size() == 2);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  ParetoArchive big;
  std::vector<ObjectiveVector> all;
  for (int i = 0; i < 300; ++i) {
    const ObjectiveVector v = obj(static_cast<std::int64_t>(u(rng) * 1e6), u(rng) * 1e9, u(rng), u(rng));
    all.push_back(v);
    update_archive(big, member("m" + std::to_string(i), v));
  }
  for (const auto& m : big.members()) {
    const auto mv = minimization_vector(m.objectives);
    for (const auto& v : all) CHECK_FALSE(dominates(minimization_vector(v), mv));
  }
}

TEST_CASE("normalizer maps into the unit cube") {
  const std::vector<ObjectiveVector> pop = {obj(100, 10, 0.5, 0.2), obj(300, 30, 0.7, 0.2)};
  const Normalizer n = fit_normalizer(pop);
  CHECK(n.lo[0] == 100);
  CHECK(n.hi[2] == doctest::Approx(0.5));
  const Point p = n.transform(obj(200, 30, 0.6, 0.2));
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(1.0));
  CHECK(p[2] == doctest::Approx(0.5));
  CHECK(p[3] == 0.0);  // degenerate objective

  const Normalizer fixed = fit_normalizer(pop, NormPolicy::FixedBounds);
  const Point q = fixed.transform(obj(1000, 0, 0.9, 0.2));
  CHECK(q[0] == 1.0);
  CHECK(q[1] == 0.0);
  CHECK(q[2] == 0.0);
  CHECK_THROWS_AS(fit_normalizer({}), EmptySet);
}

TEST_CASE("hypervolume: closed forms and inclusion-exclusion") {
  CHECK(hypervolume({}) == 0.0);
  CHECK(hypervolume({{0, 0}}) == doctest::Approx(1.0));
  CHECK(hypervolume({{0.5, 0.5}, {0.25, 0.75}}) == doctest::Approx(0.3125));
  CHECK(hypervolume({{0.5, 0.5, 0.5, 0.5}}) == doctest::Approx(0.0625));
  CHECK(hypervolume({{0.5, 0.5}, {0.6, 0.6}}) == doctest::Approx(0.25));  // dominated point adds nothing
  const HvReport r = hv_report({{0.5, 0.5}, {0.25, 0.75}});
  CHECK(r.paper_hv == doctest::Approx(0.6875));
  CHECK_THROWS_AS(hypervolume({{1.5, 0.0}}), PointOutOfBox);
  CHECK_THROWS_AS(hypervolume({{0.1, 0.2}, {0.1, 0.2, 0.3}}), DimensionMismatch);
  CHECK_THROWS_AS(hypervolume({{0.1, 0.1, 0.1, 0.1, 0.1}}), DimensionMismatch);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t d = 1 + trial % 4;
    const std::size_t n = 1 + rng() % 9;
    std::vector<Point> pts(n, Point(d));
    for (auto& p : pts) {
      for (auto& x : p) x = u(rng);
    }
    CAPTURE(trial);
    CHECK(hypervolume(pts) == doctest::Approx(inclusion_exclusion_hv(pts)).epsilon(1e-9));
  }
}

TEST_CASE("hypervolume agrees with Monte-Carlo sampling in four dimensions") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Point> pts(25, Point(4));
  for (auto& p : pts) {
    for (auto& x : p) x = 0.3 + 0.7 * u(rng);
  }
  const int samples = 200000;
  int inside = 0;
  Point s(4);
  for (int i = 0; i < samples; ++i) {
    for (auto& x : s) x = u(rng);
    for (const auto& p : pts) {
      if (p[0] <= s[0] && p[1] <= s[1] && p[2] <= s[2] && p[3] <= s[3]) {
        ++inside;
        break;
      }
    }
  }
  const double mc = static_cast<double>(inside) / samples;
  const double sigma = std::sqrt(mc * (1 - mc) / samples);
  CHECK(std::abs(hypervolume(pts) - mc) < 5 * sigma);
}

TEST_CASE("export writes figure tables from run logs") {
  testing::TempDir dir;
  auto write_run = [&](const std::string& name, double shift) {
    nlohmann::json gen0 = {{"gen", 0}, {"archive", nlohmann::json::array()}};
    nlohmann::json gen1 = {{"gen", 1}, {"archive", nlohmann::json::array()}};
    std::string individuals;
    for (int i = 0; i < 3; ++i) {
      const std::string fp = name + std::to_string(i);
      nlohmann::json o = {{"params", 100 * (i + 1)}, {"cost", 10.0 * (3 - i) + shift}, {"cost_kind", "macs"},
                          {"precision", 0.5},        {"recall", 0.5},                   {"map50", nullptr},
                          {"map50_95", nullptr},     {"synthetic", true}};
      nlohmann::json m = {{"fingerprint", fp}, {"generation", 0}, {"objectives", o}};
      if (i < 2) gen0["archive"].push_back(m);
      gen1["archive"].push_back(m);
      individuals += nlohmann::json{{"fingerprint", fp}, {"status", "valid"}, {"generation", 0}, {"objectives", o}}.dump() + "\n";
    }
    testing::spit(dir / (name + "/generations.jsonl"), gen0.dump() + "\n" + gen1.dump() + "\n");
    testing::spit(dir / (name + "/individuals.jsonl"), individuals);
    return dir / name;
  };
  const auto r1 = write_run("runA", 0);
  const auto r2 = write_run("runB", 1);
  const ExportSummary s = export_run_metrics({r1, r2}, dir / "fig");
  CHECK(s.generations_rows == 4);
  CHECK(s.files.size() == 4);
  const std::string counts = testing::slurp(dir / "fig/pareto_counts.csv");
  CHECK(counts.rfind("run,generation,archive_size\n", 0) == 0);
  CHECK(counts.find("runA,0,2\n") != std::string::npos);
  CHECK(counts.find("runB,1,3\n") != std::string::npos);
  const std::string hv = testing::slurp(dir / "fig/hypervolume.csv");
  CHECK(hv.rfind("run,generation,dominated_hv,paper_hv\n", 0) == 0);
  const auto merged = nlohmann::json::parse(testing::slurp(dir / "fig/merged_front.json"));
  // runB is runA shifted up in cost, so only runA's points survive.
  CHECK(merged["members"].size() == 3);
  CHECK(s.front_rows == 3);
  for (const auto& m : merged["members"]) CHECK(m["run"] == "runA");

  testing::spit(dir / "bad/generations.jsonl", "{\"gen\": 0, \"archive\": []}\nnot json\n");
  testing::spit(dir / "bad/individuals.jsonl", "");
  try {
    export_run_metrics({dir / "bad"}, dir / "fig2");
    FAIL("expected LogCorrupt");
  } catch (const LogCorrupt& e) {
    CHECK(e.line() == 2);
  }
}
