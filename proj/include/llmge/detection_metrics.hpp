#pragma once

// Detection scoring: IoU, greedy matching, all-point interpolated AP,
// mAP@50 / mAP@50-95, and KITTI label ingestion.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace llmge {

struct BBox {
  double left = 0;
  double top = 0;
  double right = 0;
  double bottom = 0;

  double area() const;
};

struct Detection {
  std::string image_id;
  int class_id = 0;
  BBox bbox;
  double confidence = 0;
};

// class_id < 0 on an ignored box applies the ignore region to every class
// (KITTI "DontCare").
struct GroundTruthBox {
  std::string image_id;
  int class_id = 0;
  BBox bbox;
  bool ignore = false;
};

enum class MatchLabel { TruePositive, FalsePositive, Ignored };

struct ScoredLabel {
  double confidence = 0;
  bool true_positive = false;
};

struct ClassAp {
  double ap50 = 0;
  double ap50_95 = 0;
  std::size_t ground_truth = 0;
  std::size_t detections = 0;
};

struct DetMetrics {
  double map50 = 0;
  double map50_95 = 0;
  double precision = 0;
  double recall = 0;
  std::map<int, ClassAp> per_class;
  bool empty_ground_truth = false;
};

struct EvalSettings {
  std::vector<double> iou_grid = {0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  double confidence_cutoff = 0.0;  // operating point for precision/recall
};

double iou(const BBox& a, const BBox& b);

// `dets` and `gts` are one class of one image; `dets` sorted by descending
// confidence. Each detection takes the highest-IoU unmatched non-ignored GT at
// or above the threshold; otherwise it is Ignored if it overlaps an ignore
// region at the threshold, else a false positive.
std::vector<MatchLabel> match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                         double iou_thresh);

// All-point interpolated AP over labels sorted by descending confidence.
double average_precision(const std::vector<ScoredLabel>& labels, std::size_t n_gt);

DetMetrics evaluate_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                               const EvalSettings& settings = {});

class KittiFormatError : public std::runtime_error {
 public:
  KittiFormatError(const std::string& file, int line, const std::string& what)
      : std::runtime_error("MalformedLine: " + file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}
  const std::string& file() const noexcept { return file_; }
  int line() const noexcept { return line_; }

 private:
  std::string file_;
  int line_;
};

// KITTI object classes; DontCare maps to an ignored box with class_id -1.
std::map<std::string, int> default_kitti_classes();

// One GroundTruthBox per label line; image_id = file stem. Accepts a label
// directory (all *.txt, sorted) or a single file.
std::vector<GroundTruthBox> load_kitti_labels(const std::filesystem::path& path,
                                              const std::map<std::string, int>& classes = default_kitti_classes());

// Detections as JSON lines {image_id, class_id, bbox[4], confidence}.
std::vector<Detection> load_detections_jsonl(const std::filesystem::path& path);

}  // namespace llmge
