#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace yolors {

struct Box {
  double x1, y1, x2, y2;
};

struct Detection {
  int class_id = 0;
  double score = 0.0;
  Box box{0, 0, 0, 0};
  int image_id = 0;
};

struct GroundTruth {
  int class_id = 0;
  Box box{0, 0, 0, 0};
  int image_id = 0;
};

// Intersection area over union area, in [0,1]; throws on degenerate boxes.
double iou(const Box& a, const Box& b);

struct MatchResult {
  std::vector<int> det_is_tp;      // per detection (original order)
  std::vector<int> det_matched_gt; // index into truths, -1 for FP
  std::vector<char> gt_matched;
  int tp = 0, fp = 0, fn = 0;
};

// Greedy by descending score: each detection takes the highest-IoU unmatched
// same-class truth of the same image with IoU >= threshold.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& truths, double iou_threshold);

struct PrResult {
  double precision = 0.0;
  double recall = 0.0;
  bool precision_defined = true;  // false when TP+FP == 0
  bool recall_defined = true;     // false when TP+FN == 0
};

PrResult precision_recall(const MatchResult& m);

// Harmonic mean 2PR/(P+R); 0 when P+R == 0.
double f1(double p, double r);

// 101-point interpolated average precision for a single class.
double average_precision(const std::vector<Detection>& dets,
                         const std::vector<GroundTruth>& truths, double iou_threshold);

struct MapResult {
  double map50 = 0.0;
  double map50_95 = 0.0;
  // per class id, per threshold (index into the threshold list)
  std::map<int, std::vector<double>> ap_per_class;
  std::vector<double> thresholds;
};

// mAP at 0.5 and averaged over the given thresholds (default 0.50..0.95
// step 0.05). Classes are those present in the ground truth.
MapResult map_at(const std::vector<Detection>& dets, const std::vector<GroundTruth>& truths,
                 std::vector<double> thresholds = {});

// (C+1)x(C+1); last row/column is background. Rows are true classes.
std::vector<std::vector<int>> confusion_matrix(const std::vector<Detection>& dets,
                                               const std::vector<GroundTruth>& truths,
                                               int num_classes, double iou_threshold,
                                               double conf_threshold);

struct ClassEval {
  PrResult pr;
  double f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  std::map<int, ClassEval> per_class;
  double precision = 0.0;  // micro-averaged at the confidence threshold
  double recall = 0.0;
  double f1 = 0.0;
  MapResult maps;
  std::vector<std::vector<int>> confusion;
  double conf_threshold = 0.25;
  double iou_threshold = 0.5;
};

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& truths,
                    int num_classes, double iou_threshold = 0.5, double conf_threshold = 0.25);

// Fixed field names: precision, recall, f1, ap, map50, map50_95, confusion.
// All rates are fractions, never percentages.
nlohmann::json eval_report_to_json(const EvalReport& r);

}  // namespace yolors
