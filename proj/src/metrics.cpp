#include "yolors/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace yolors {

namespace {

void check_box(const Box& b, const char* who) {
  if (!(b.x2 > b.x1) || !(b.y2 > b.y1))
    throw std::invalid_argument(std::string(who) + ": degenerate box");
}

// Detection indices sorted by descending score, ties by original index.
std::vector<int> rank_by_score(const std::vector<Detection>& dets) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  check_box(a, "iou");
  check_box(b, "iou");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruth>& truths, double iou_threshold) {
  MatchResult m;
  m.det_is_tp.assign(dets.size(), 0);
  m.det_matched_gt.assign(dets.size(), -1);
  m.gt_matched.assign(truths.size(), 0);
  for (int di : rank_by_score(dets)) {
    const Detection& d = dets[static_cast<size_t>(di)];
    double best = iou_threshold;
    int best_gt = -1;
    for (size_t gi = 0; gi < truths.size(); ++gi) {
      const GroundTruth& g = truths[gi];
      if (m.gt_matched[gi] || g.class_id != d.class_id || g.image_id != d.image_id) continue;
      const double v = iou(d.box, g.box);
      if (v >= best) {
        best = v;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      m.gt_matched[static_cast<size_t>(best_gt)] = 1;
      m.det_is_tp[static_cast<size_t>(di)] = 1;
      m.det_matched_gt[static_cast<size_t>(di)] = best_gt;
      ++m.tp;
    } else {
      ++m.fp;
    }
  }
  m.fn = static_cast<int>(truths.size()) - m.tp;
  return m;
}

PrResult precision_recall(const MatchResult& m) {
  PrResult r;
  if (m.tp + m.fp > 0) {
    r.precision = static_cast<double>(m.tp) / (m.fp + m.tp);
  } else {
    r.precision_defined = false;
  }
  if (m.tp + m.fn > 0) {
    r.recall = static_cast<double>(m.tp) / (m.fn + m.tp);
  } else {
    r.recall_defined = false;
  }
  return r;
}

double f1(double p, double r) {
  if (p + r <= 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double average_precision(const std::vector<Detection>& dets,
                         const std::vector<GroundTruth>& truths, double iou_threshold) {
  for (const auto& d : dets)
    if (d.class_id != dets.front().class_id)
      throw std::invalid_argument("average_precision: expects a single class");
  if (truths.empty()) return 0.0;  // flagged degenerate: no truths
  if (dets.empty()) return 0.0;

  const MatchResult m = match_detections(dets, truths, iou_threshold);
  const std::vector<int> order = rank_by_score(dets);
  const double total_truths = static_cast<double>(truths.size());

  // precision/recall after each rank
  std::vector<double> prec(order.size()), rec(order.size());
  int tp = 0;
  for (size_t r = 0; r < order.size(); ++r) {
    tp += m.det_is_tp[static_cast<size_t>(order[r])];
    prec[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
    rec[r] = static_cast<double>(tp) / total_truths;
  }
  // precision envelope: running max from the right
  for (int r = static_cast<int>(order.size()) - 2; r >= 0; --r)
    prec[static_cast<size_t>(r)] =
        std::max(prec[static_cast<size_t>(r)], prec[static_cast<size_t>(r) + 1]);

  double acc = 0.0;
  for (int s = 0; s <= 100; ++s) {
    const double want = s / 100.0;
    double p = 0.0;
    for (size_t r = 0; r < order.size(); ++r)
      if (rec[r] >= want - 1e-12) {
        p = prec[r];
        break;
      }
    acc += p;
  }
  return acc / 101.0;
}

MapResult map_at(const std::vector<Detection>& dets, const std::vector<GroundTruth>& truths,
                 std::vector<double> thresholds) {
  MapResult r;
  if (thresholds.empty())
    for (int i = 0; i <= 9; ++i) thresholds.push_back(0.50 + 0.05 * i);
  r.thresholds = thresholds;

  std::set<int> classes;
  for (const auto& g : truths) classes.insert(g.class_id);
  if (classes.empty()) return r;

  std::vector<double> map_per_threshold(thresholds.size(), 0.0);
  for (int c : classes) {
    std::vector<Detection> cd;
    std::vector<GroundTruth> cg;
    for (const auto& d : dets)
      if (d.class_id == c) cd.push_back(d);
    for (const auto& g : truths)
      if (g.class_id == c) cg.push_back(g);
    auto& row = r.ap_per_class[c];
    for (size_t t = 0; t < thresholds.size(); ++t) {
      row.push_back(average_precision(cd, cg, thresholds[t]));
      map_per_threshold[t] += row.back();
    }
  }
  for (auto& v : map_per_threshold) v /= static_cast<double>(classes.size());

  r.map50_95 = 0.0;
  for (size_t t = 0; t < thresholds.size(); ++t) {
    if (std::fabs(thresholds[t] - 0.5) < 1e-9) r.map50 = map_per_threshold[t];
    r.map50_95 += map_per_threshold[t];
  }
  r.map50_95 /= static_cast<double>(thresholds.size());
  return r;
}

std::vector<std::vector<int>> confusion_matrix(const std::vector<Detection>& dets,
                                               const std::vector<GroundTruth>& truths,
                                               int num_classes, double iou_threshold,
                                               double conf_threshold) {
  std::vector<std::vector<int>> m(static_cast<size_t>(num_classes) + 1,
                                  std::vector<int>(static_cast<size_t>(num_classes) + 1, 0));
  std::vector<Detection> kept;
  for (const auto& d : dets)
    if (d.score >= conf_threshold) kept.push_back(d);

  // class-agnostic greedy matching so cross-class mistakes land off-diagonal
  std::vector<char> gt_matched(truths.size(), 0);
  for (int di : rank_by_score(kept)) {
    const Detection& d = kept[static_cast<size_t>(di)];
    double best = iou_threshold;
    int best_gt = -1;
    for (size_t gi = 0; gi < truths.size(); ++gi) {
      if (gt_matched[gi] || truths[gi].image_id != d.image_id) continue;
      const double v = iou(d.box, truths[gi].box);
      if (v >= best) {
        best = v;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      gt_matched[static_cast<size_t>(best_gt)] = 1;
      m[static_cast<size_t>(truths[static_cast<size_t>(best_gt)].class_id)]
       [static_cast<size_t>(d.class_id)]++;
    } else {
      m[static_cast<size_t>(num_classes)][static_cast<size_t>(d.class_id)]++;
    }
  }
  for (size_t gi = 0; gi < truths.size(); ++gi)
    if (!gt_matched[gi])
      m[static_cast<size_t>(truths[gi].class_id)][static_cast<size_t>(num_classes)]++;
  return m;
}

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& truths,
                    int num_classes, double iou_threshold, double conf_threshold) {
  EvalReport r;
  r.iou_threshold = iou_threshold;
  r.conf_threshold = conf_threshold;

  std::vector<Detection> kept;
  for (const auto& d : dets)
    if (d.score >= conf_threshold) kept.push_back(d);

  int tp = 0, fp = 0, fn = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<Detection> cd;
    std::vector<GroundTruth> cg;
    for (const auto& d : kept)
      if (d.class_id == c) cd.push_back(d);
    for (const auto& g : truths)
      if (g.class_id == c) cg.push_back(g);
    if (cd.empty() && cg.empty()) continue;
    ClassEval ce;
    const MatchResult m = match_detections(cd, cg, iou_threshold);
    ce.tp = m.tp;
    ce.fp = m.fp;
    ce.fn = m.fn;
    ce.pr = precision_recall(m);
    ce.f1 = f1(ce.pr.precision, ce.pr.recall);
    r.per_class[c] = ce;
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = f1(r.precision, r.recall);
  r.maps = map_at(dets, truths);
  r.confusion = confusion_matrix(dets, truths, num_classes, iou_threshold, conf_threshold);
  return r;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["map50"] = r.maps.map50;
  j["map50_95"] = r.maps.map50_95;
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [c, row] : r.maps.ap_per_class) {
    nlohmann::json per_thr = nlohmann::json::object();
    for (size_t t = 0; t < row.size(); ++t) {
      char key[8];
      std::snprintf(key, sizeof key, "%.2f", r.maps.thresholds[t]);
      per_thr[key] = row[t];
    }
    ap[std::to_string(c)] = per_thr;
  }
  j["ap"] = ap;
  nlohmann::json pc = nlohmann::json::object();
  for (const auto& [c, ce] : r.per_class)
    pc[std::to_string(c)] = {{"precision", ce.pr.precision},
                             {"recall", ce.pr.recall},
                             {"f1", ce.f1},
                             {"tp", ce.tp},
                             {"fp", ce.fp},
                             {"fn", ce.fn},
                             {"precision_defined", ce.pr.precision_defined},
                             {"recall_defined", ce.pr.recall_defined}};
  j["per_class"] = pc;
  j["confusion"] = r.confusion;
  j["conf_threshold"] = r.conf_threshold;
  j["iou_threshold"] = r.iou_threshold;
  return j;
}

}  // namespace yolors
