#pragma once

// Multi-objective machinery: dominance, non-dominated sorting, crowding
// distance, the Pareto archive, normalization into the unit cube, exact
// hypervolume for up to four objectives, and figure-data exporters.
//
// All objective vectors here are in minimization form:
//   (params, cost, 1 - precision, 1 - recall)

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "llmge/evaluator.hpp"

namespace llmge {

using Point = std::vector<double>;

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class PointOutOfBox : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};
class EmptySet : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class LogCorrupt : public std::runtime_error {
 public:
  LogCorrupt(const std::string& file, int line, const std::string& what)
      : std::runtime_error("LogCorrupt: " + file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}
  const std::string& file() const noexcept { return file_; }
  int line() const noexcept { return line_; }

 private:
  std::string file_;
  int line_;
};

// a <= b everywhere and a < b somewhere. Throws DimensionMismatch.
bool dominates(std::span<const double> a, std::span<const double> b);

// Fronts of point indices; front 0 is the non-dominated set. Each front is in
// ascending index order.
std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<Point>& points);

// Boundary points get +inf; interior points sum per-objective normalized gaps
// between their sorted neighbours. Objectives with zero range contribute 0.
std::vector<double> crowding_distance(const std::vector<Point>& front);

std::array<double, 4> minimization_vector(const ObjectiveVector& v);

struct ArchiveMember {
  std::string fingerprint;
  ObjectiveVector objectives;
  std::string run;  // source-run tag when merging
  int generation = 0;
};

class ParetoArchive {
 public:
  const std::vector<ArchiveMember>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  bool contains(const std::string& fingerprint) const;

 private:
  friend bool update_archive(ParetoArchive& archive, const ArchiveMember& candidate);
  std::vector<ArchiveMember> members_;
};

// Inserts iff no member dominates the candidate and its fingerprint is new;
// evicts members the candidate dominates. Returns whether it was inserted.
bool update_archive(ParetoArchive& archive, const ArchiveMember& candidate);

enum class NormPolicy { WholeRun, FixedBounds };

// Affine map of minimization vectors into [0,1]^4. A degenerate objective
// (lo == hi) maps to 0. Under FixedBounds values outside the bounds are
// clamped.
struct Normalizer {
  std::array<double, 4> lo{0, 0, 0, 0};
  std::array<double, 4> hi{1, 1, 1, 1};
  NormPolicy policy = NormPolicy::WholeRun;

  Point transform(const ObjectiveVector& v) const;
};

// Bounds = min/max of the minimization vectors. Throws EmptySet.
Normalizer fit_normalizer(const std::vector<ObjectiveVector>& individuals, NormPolicy policy = NormPolicy::WholeRun);

// Lebesgue measure of the union of boxes [p, (1,...,1)] for p in [0,1]^d,
// d <= 4. Throws PointOutOfBox, DimensionMismatch.
double hypervolume(const std::vector<Point>& front);

struct HvReport {
  double dominated_hv = 0;
  double paper_hv = 1;  // 1 - dominated_hv; smaller is better
};

HvReport hv_report(const std::vector<Point>& front);

struct ExportOptions {
  // One normalizer fitted over all runs instead of one per run.
  bool joint_normalization = false;
};

struct ExportSummary {
  std::size_t generations_rows = 0;
  std::size_t front_rows = 0;
  std::vector<std::filesystem::path> files;
};

// Reads generations.jsonl and individuals.jsonl from each run directory and
// writes pareto_counts.csv, hypervolume.csv, parallel_coords.csv and
// merged_front.json into `out_dir`. Throws LogCorrupt.
ExportSummary export_run_metrics(const std::vector<std::filesystem::path>& run_dirs,
                                 const std::filesystem::path& out_dir, const ExportOptions& options = {});

}  // namespace llmge
