#include "llmge/moo_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json_io.hpp"

namespace llmge {
namespace {

double hv_recursive(std::vector<const Point*> pts, std::size_t d) {
  if (pts.empty()) return 0.0;
  if (d == 1) {
    double lo = 1.0;
    for (const auto* p : pts) lo = std::min(lo, (*p)[0]);
    return 1.0 - lo;
  }
  if (d == 2) {
    std::sort(pts.begin(), pts.end(), [](const Point* a, const Point* b) {
      return (*a)[0] < (*b)[0] || ((*a)[0] == (*b)[0] && (*a)[1] < (*b)[1]);
    });
    double area = 0.0;
    double best_y = 1.0;
    for (const auto* p : pts) {
      if ((*p)[1] < best_y) {
        area += (1.0 - (*p)[0]) * (best_y - (*p)[1]);
        best_y = (*p)[1];
      }
    }
    return area;
  }
  const std::size_t axis = d - 1;
  std::sort(pts.begin(), pts.end(), [axis](const Point* a, const Point* b) { return (*a)[axis] < (*b)[axis]; });
  double volume = 0.0;
  std::vector<const Point*> prefix;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    prefix.push_back(pts[i]);
    const double next = i + 1 < pts.size() ? (*pts[i + 1])[axis] : 1.0;
    const double height = next - (*pts[i])[axis];
    if (height > 0) volume += height * hv_recursive(prefix, d - 1);
  }
  return volume;
}

struct RunLog {
  std::string tag;
  std::vector<std::pair<int, std::vector<ArchiveMember>>> generations;
  std::vector<ObjectiveVector> valid;
};

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LogCorrupt(path.string(), 0, "cannot open");
  std::vector<nlohmann::json> rows;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw LogCorrupt(path.string(), line, e.what());
    }
  }
  return rows;
}

RunLog read_run(const std::filesystem::path& dir) {
  RunLog log;
  log.tag = dir.filename().string();
  if (log.tag.empty()) log.tag = dir.parent_path().filename().string();
  const auto gen_path = dir / "generations.jsonl";
  const auto rows = read_jsonl(gen_path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      std::vector<ArchiveMember> members;
      for (const auto& m : rows[i].at("archive")) {
        members.push_back({m.at("fingerprint").get<std::string>(), detail::objectives_from_json(m.at("objectives")),
                           log.tag, m.value("generation", 0)});
      }
      log.generations.emplace_back(rows[i].at("gen").get<int>(), std::move(members));
    } catch (const nlohmann::json::exception& e) {
      throw LogCorrupt(gen_path.string(), static_cast<int>(i) + 1, e.what());
    }
  }
  const auto ind_path = dir / "individuals.jsonl";
  if (std::filesystem::exists(ind_path)) {
    const auto inds = read_jsonl(ind_path);
    for (std::size_t i = 0; i < inds.size(); ++i) {
      try {
        if (inds[i].at("status").get<std::string>() == "valid") {
          log.valid.push_back(detail::objectives_from_json(inds[i].at("objectives")));
        }
      } catch (const nlohmann::json::exception& e) {
        throw LogCorrupt(ind_path.string(), static_cast<int>(i) + 1, e.what());
      }
    }
  }
  if (log.valid.empty()) {
    for (const auto& [gen, members] : log.generations) {
      for (const auto& m : members) log.valid.push_back(m.objectives);
    }
  }
  return log;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

}  // namespace

bool dominates(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("dominance needs equal dimensions (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  }
  bool strictly = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strictly = true;
  }
  return strictly;
}

std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<Point>& points) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> dominated_by_me(n);
  std::vector<std::size_t> domination_count(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dominates(points[i], points[j])) {
        dominated_by_me[i].push_back(j);
        ++domination_count[j];
      } else if (dominates(points[j], points[i])) {
        dominated_by_me[j].push_back(i);
        ++domination_count[i];
      }
    }
  }
  std::vector<std::vector<std::size_t>> fronts;
  std::vector<std::size_t> current;
  for (std::size_t i = 0; i < n; ++i) {
    if (domination_count[i] == 0) current.push_back(i);
  }
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (auto i : current) {
      for (auto j : dominated_by_me[i]) {
        if (--domination_count[j] == 0) next.push_back(j);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(current));
    current = std::move(next);
  }
  return fronts;
}

std::vector<double> crowding_distance(const std::vector<Point>& front) {
  const std::size_t n = front.size();
  std::vector<double> dist(n, 0.0);
  if (n == 0) return dist;
  if (n <= 2) return std::vector<double>(n, std::numeric_limits<double>::infinity());
  const std::size_t d = front.front().size();
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < d; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return front[a][k] < front[b][k]; });
    dist[order.front()] = std::numeric_limits<double>::infinity();
    dist[order.back()] = std::numeric_limits<double>::infinity();
    const double range = front[order.back()][k] - front[order.front()][k];
    if (range <= 0) continue;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      dist[order[i]] += (front[order[i + 1]][k] - front[order[i - 1]][k]) / range;
    }
  }
  return dist;
}

std::array<double, 4> minimization_vector(const ObjectiveVector& v) {
  return {static_cast<double>(v.params), v.cost, 1.0 - v.precision, 1.0 - v.recall};
}

bool ParetoArchive::contains(const std::string& fingerprint) const {
  return std::any_of(members_.begin(), members_.end(),
                     [&](const ArchiveMember& m) { return m.fingerprint == fingerprint; });
}

bool update_archive(ParetoArchive& archive, const ArchiveMember& candidate) {
  if (archive.contains(candidate.fingerprint)) return false;
  const auto cv = minimization_vector(candidate.objectives);
  for (const auto& m : archive.members_) {
    if (dominates(minimization_vector(m.objectives), cv)) return false;
  }
  std::erase_if(archive.members_,
                [&](const ArchiveMember& m) { return dominates(cv, minimization_vector(m.objectives)); });
  archive.members_.push_back(candidate);
  return true;
}

Point Normalizer::transform(const ObjectiveVector& v) const {
  const auto raw = minimization_vector(v);
  Point out(4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double span = hi[i] - lo[i];
    double x = span > 0 ? (raw[i] - lo[i]) / span : 0.0;
    if (policy == NormPolicy::FixedBounds || span <= 0) x = std::clamp(x, 0.0, 1.0);
    out[i] = x;
  }
  return out;
}

Normalizer fit_normalizer(const std::vector<ObjectiveVector>& individuals, NormPolicy policy) {
  if (individuals.empty()) throw EmptySet("cannot fit a normalizer on an empty set");
  Normalizer n;
  n.policy = policy;
  n.lo = minimization_vector(individuals.front());
  n.hi = n.lo;
  for (const auto& v : individuals) {
    const auto raw = minimization_vector(v);
    for (std::size_t i = 0; i < 4; ++i) {
      if (!std::isfinite(raw[i])) throw std::invalid_argument("non-finite objective");
      n.lo[i] = std::min(n.lo[i], raw[i]);
      n.hi[i] = std::max(n.hi[i], raw[i]);
    }
  }
  return n;
}

double hypervolume(const std::vector<Point>& front) {
  if (front.empty()) return 0.0;
  const std::size_t d = front.front().size();
  if (d == 0 || d > 4) throw DimensionMismatch("exact hypervolume supports 1 to 4 objectives");
  std::vector<const Point*> pts;
  for (const auto& p : front) {
    if (p.size() != d) throw DimensionMismatch("front points differ in dimension");
    for (double x : p) {
      if (!(x >= 0.0 && x <= 1.0)) throw PointOutOfBox("hypervolume point outside [0,1]^d");
    }
    pts.push_back(&p);
  }
  return hv_recursive(std::move(pts), d);
}

HvReport hv_report(const std::vector<Point>& front) {
  const double hv = hypervolume(front);
  return {hv, 1.0 - hv};
}

ExportSummary export_run_metrics(const std::vector<std::filesystem::path>& run_dirs,
                                 const std::filesystem::path& out_dir, const ExportOptions& options) {
  if (run_dirs.empty()) throw std::invalid_argument("no run directories given");
  std::vector<RunLog> runs;
  for (const auto& dir : run_dirs) runs.push_back(read_run(dir));

  std::optional<Normalizer> joint;
  if (options.joint_normalization) {
    std::vector<ObjectiveVector> all;
    for (const auto& r : runs) all.insert(all.end(), r.valid.begin(), r.valid.end());
    if (!all.empty()) joint = fit_normalizer(all);
  }

  std::filesystem::create_directories(out_dir);
  ExportSummary summary;
  std::ofstream counts(out_dir / "pareto_counts.csv");
  std::ofstream hv(out_dir / "hypervolume.csv");
  counts << "run,generation,archive_size\n";
  hv << "run,generation,dominated_hv,paper_hv\n";
  for (const auto& r : runs) {
    std::optional<Normalizer> norm = joint;
    if (!norm && !r.valid.empty()) norm = fit_normalizer(r.valid);
    for (const auto& [gen, members] : r.generations) {
      counts << r.tag << "," << gen << "," << members.size() << "\n";
      std::vector<Point> pts;
      if (norm) {
        for (const auto& m : members) pts.push_back(norm->transform(m.objectives));
      }
      const HvReport rep = hv_report(pts);
      hv << r.tag << "," << gen << "," << num(rep.dominated_hv) << "," << num(rep.paper_hv) << "\n";
      ++summary.generations_rows;
    }
  }

  ParetoArchive merged;
  for (const auto& r : runs) {
    if (r.generations.empty()) continue;
    for (const auto& m : r.generations.back().second) update_archive(merged, m);
  }
  std::ofstream coords(out_dir / "parallel_coords.csv");
  coords << "run,fingerprint,params,cost,precision,recall,map50,map50_95\n";
  nlohmann::json front_json;
  front_json["runs"] = nlohmann::json::array();
  for (const auto& r : runs) front_json["runs"].push_back(r.tag);
  front_json["joint_normalization"] = options.joint_normalization;
  front_json["members"] = nlohmann::json::array();
  for (const auto& m : merged.members()) {
    const auto& o = m.objectives;
    coords << m.run << "," << m.fingerprint << "," << o.params << "," << num(o.cost) << "," << num(o.precision) << ","
           << num(o.recall) << "," << opt_num(o.map50) << "," << opt_num(o.map50_95) << "\n";
    front_json["members"].push_back(
        {{"run", m.run}, {"fingerprint", m.fingerprint}, {"objectives", detail::objectives_to_json(o)}});
    ++summary.front_rows;
  }
  std::ofstream(out_dir / "merged_front.json") << front_json.dump(2) << "\n";
  summary.files = {out_dir / "pareto_counts.csv", out_dir / "hypervolume.csv", out_dir / "parallel_coords.csv",
                   out_dir / "merged_front.json"};
  return summary;
}

}  // namespace llmge
