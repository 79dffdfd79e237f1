#include "llmge/detection_metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace llmge {
namespace {

std::vector<std::size_t> by_confidence(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}

bool applies_to(const GroundTruthBox& gt, int class_id) {
  return gt.class_id == class_id || (gt.ignore && gt.class_id < 0);
}

struct Slice {
  std::vector<Detection> dets;
  std::vector<GroundTruthBox> gts;
};

using SliceMap = std::map<std::string, Slice>;  // image -> slice, one class

SliceMap slices_for_class(int class_id, const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                          double min_confidence) {
  SliceMap slices;
  for (const auto& d : dets) {
    if (d.class_id == class_id && d.confidence >= min_confidence) slices[d.image_id].dets.push_back(d);
  }
  for (const auto& g : gts) {
    if (applies_to(g, class_id)) slices[g.image_id].gts.push_back(g);
  }
  for (auto& [image, slice] : slices) {
    const auto order = by_confidence(slice.dets);
    std::vector<Detection> sorted;
    for (auto i : order) sorted.push_back(slice.dets[i]);
    slice.dets = std::move(sorted);
  }
  return slices;
}

std::size_t count_gt(const SliceMap& slices) {
  std::size_t n = 0;
  for (const auto& [image, slice] : slices) {
    n += static_cast<std::size_t>(std::count_if(slice.gts.begin(), slice.gts.end(),
                                                [](const GroundTruthBox& g) { return !g.ignore; }));
  }
  return n;
}

std::vector<ScoredLabel> pooled_labels(const SliceMap& slices, double thresh) {
  std::vector<ScoredLabel> labels;
  for (const auto& [image, slice] : slices) {
    const auto matched = match_detections(slice.dets, slice.gts, thresh);
    for (std::size_t i = 0; i < matched.size(); ++i) {
      if (matched[i] == MatchLabel::Ignored) continue;
      labels.push_back({slice.dets[i].confidence, matched[i] == MatchLabel::TruePositive});
    }
  }
  std::stable_sort(labels.begin(), labels.end(),
                   [](const ScoredLabel& a, const ScoredLabel& b) { return a.confidence > b.confidence; });
  return labels;
}

double parse_field(const std::string& token, const std::string& file, int line, const char* name) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw KittiFormatError(file, line, std::string("bad ") + name + " '" + token + "'");
  }
  return v;
}

void read_label_file(const std::filesystem::path& path, const std::map<std::string, int>& classes,
                     std::vector<GroundTruthBox>& out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file " + path.string());
  const std::string file = path.string();
  const std::string image = path.stem().string();
  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    std::istringstream fields(text);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (tokens.size() < 8) throw KittiFormatError(file, line_no, "expected at least 8 fields");
    parse_field(tokens[1], file, line_no, "truncated");
    parse_field(tokens[2], file, line_no, "occluded");
    parse_field(tokens[3], file, line_no, "alpha");
    GroundTruthBox gt;
    gt.image_id = image;
    gt.bbox = {parse_field(tokens[4], file, line_no, "left"), parse_field(tokens[5], file, line_no, "top"),
               parse_field(tokens[6], file, line_no, "right"), parse_field(tokens[7], file, line_no, "bottom")};
    if (gt.bbox.right < gt.bbox.left || gt.bbox.bottom < gt.bbox.top) {
      throw KittiFormatError(file, line_no, "box has right < left or bottom < top");
    }
    const auto it = classes.find(tokens[0]);
    if (tokens[0] == "DontCare") {
      gt.ignore = true;
      gt.class_id = it == classes.end() ? -1 : it->second;
    } else if (it == classes.end()) {
      throw KittiFormatError(file, line_no, "unknown class '" + tokens[0] + "'");
    } else {
      gt.class_id = it->second;
    }
    out.push_back(std::move(gt));
  }
}

}  // namespace

double BBox::area() const { return std::max(0.0, right - left) * std::max(0.0, bottom - top); }

double iou(const BBox& a, const BBox& b) {
  const double w = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double h = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  const double inter = w > 0 && h > 0 ? w * h : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<MatchLabel> match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                         double iou_thresh) {
  std::vector<bool> used(gts.size(), false);
  std::vector<MatchLabel> labels;
  labels.reserve(dets.size());
  for (const auto& det : dets) {
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    bool hits_ignore = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double overlap = iou(det.bbox, gts[g].bbox);
      if (overlap < iou_thresh) continue;
      if (gts[g].ignore) {
        hits_ignore = true;
      } else if (!used[g] && overlap > best) {
        best = overlap;
        best_gt = g;
      }
    }
    if (best_gt) {
      used[*best_gt] = true;
      labels.push_back(MatchLabel::TruePositive);
    } else {
      labels.push_back(hits_ignore ? MatchLabel::Ignored : MatchLabel::FalsePositive);
    }
  }
  return labels;
}

double average_precision(const std::vector<ScoredLabel>& labels, std::size_t n_gt) {
  if (n_gt == 0) return labels.empty() ? 1.0 : 0.0;
  std::vector<ScoredLabel> sorted = labels;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredLabel& a, const ScoredLabel& b) { return a.confidence > b.confidence; });
  std::vector<double> precision;
  std::vector<double> recall;
  double tp = 0;
  double fp = 0;
  for (const auto& l : sorted) {
    (l.true_positive ? tp : fp) += 1.0;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(n_gt));
  }
  // Monotone envelope from the right, then integrate over recall steps.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

DetMetrics evaluate_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                               const EvalSettings& settings) {
  std::set<int> classes;
  for (const auto& g : gts) {
    if (!g.ignore) classes.insert(g.class_id);
  }
  for (const auto& d : dets) classes.insert(d.class_id);

  DetMetrics m;
  std::size_t total_gt = 0;
  double tp = 0;
  double fp = 0;
  for (int c : classes) {
    const SliceMap all = slices_for_class(c, dets, gts, -1.0);
    ClassAp& entry = m.per_class[c];
    entry.ground_truth = count_gt(all);
    for (const auto& [image, slice] : all) entry.detections += slice.dets.size();
    entry.ap50 = average_precision(pooled_labels(all, 0.5), entry.ground_truth);
    double sum = 0;
    for (double t : settings.iou_grid) sum += average_precision(pooled_labels(all, t), entry.ground_truth);
    entry.ap50_95 = settings.iou_grid.empty() ? 0.0 : sum / static_cast<double>(settings.iou_grid.size());
    m.map50 += entry.ap50;
    m.map50_95 += entry.ap50_95;

    total_gt += entry.ground_truth;
    for (const auto& label : pooled_labels(slices_for_class(c, dets, gts, settings.confidence_cutoff), 0.5)) {
      (label.true_positive ? tp : fp) += 1.0;
    }
  }
  if (!classes.empty()) {
    m.map50 /= static_cast<double>(classes.size());
    m.map50_95 /= static_cast<double>(classes.size());
  }
  m.empty_ground_truth = total_gt == 0;
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = total_gt > 0 ? tp / static_cast<double>(total_gt) : 0.0;
  return m;
}

std::map<std::string, int> default_kitti_classes() {
  return {{"Car", 0},     {"Van", 1},   {"Truck", 2}, {"Pedestrian", 3}, {"Person_sitting", 4},
          {"Cyclist", 5}, {"Tram", 6},  {"Misc", 7}};
}

std::vector<GroundTruthBox> load_kitti_labels(const std::filesystem::path& path,
                                              const std::map<std::string, int>& classes) {
  std::vector<GroundTruthBox> out;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) read_label_file(f, classes, out);
  } else {
    read_label_file(path, classes, out);
  }
  return out;
}

std::vector<Detection> load_detections_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file " + path.string());
  std::vector<Detection> out;
  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(text);
      Detection d;
      const auto& id = j.at("image_id");
      d.image_id = id.is_string() ? id.get<std::string>() : id.dump();
      d.class_id = j.at("class_id").get<int>();
      const auto& box = j.at("bbox");
      if (!box.is_array() || box.size() != 4) throw std::runtime_error("bbox must have 4 numbers");
      d.bbox = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
      d.confidence = j.at("confidence").get<double>();
      if (d.confidence < 0.0 || d.confidence > 1.0) throw std::runtime_error("confidence outside [0,1]");
      if (d.bbox.right < d.bbox.left || d.bbox.bottom < d.bbox.top) throw std::runtime_error("inverted bbox");
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("MalformedLine: " + where + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("MalformedLine: " + where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace llmge
