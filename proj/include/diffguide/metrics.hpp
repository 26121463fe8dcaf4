#pragma once

#include <map>
#include <set>

#include "diffguide/boxes.hpp"
#include "diffguide/corruptions.hpp"

namespace diffguide {

struct Detection {
  Box box;
  int label = 0;
  double score = 0.0;
  std::string image_id;
};

using GroundTruth = std::map<std::string, BoxList>;  // image_id -> labeled boxes

struct ApResult {
  double ap = 0.0;
  bool empty = false;  // no GT and no detections for this class
};

// Greedy matching (score order, each GT at most once, IoU >= thr) and
// all-point interpolated area under the precision envelope. Call per class.
inline ApResult ap_at_iou(std::vector<Detection> dets, const GroundTruth& gts,
                          double iou_thr) {
  int num_gt = 0;
  for (const auto& [id, bl] : gts) num_gt += static_cast<int>(bl.size());
  if (num_gt == 0 && dets.empty()) return {0.0, true};
  if (num_gt == 0) return {0.0, false};
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::map<std::string, std::vector<bool>> used;
  for (const auto& [id, bl] : gts) used[id].assign(bl.size(), false);

  std::vector<int> tp(dets.size(), 0);
  for (size_t i = 0; i < dets.size(); ++i) {
    auto it = gts.find(dets[i].image_id);
    if (it == gts.end()) continue;
    const BoxList& g = it->second;
    double best = iou_thr;
    int bi = -1;
    for (size_t j = 0; j < g.size(); ++j) {
      if (used[dets[i].image_id][j]) continue;
      double v = iou(dets[i].box, g.boxes[j]);
      if (v >= best) {
        best = v;
        bi = static_cast<int>(j);
      }
    }
    if (bi >= 0) {
      tp[i] = 1;
      used[dets[i].image_id][static_cast<size_t>(bi)] = true;
    }
  }

  std::vector<double> recall(dets.size()), precision(dets.size());
  int ctp = 0;
  for (size_t i = 0; i < dets.size(); ++i) {
    ctp += tp[i];
    recall[i] = static_cast<double>(ctp) / num_gt;
    precision[i] = static_cast<double>(ctp) / static_cast<double>(i + 1);
  }
  // precision envelope, right to left
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
  double ap = 0, prev_r = 0;
  for (size_t i = 0; i < dets.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return {ap, false};
}

// split detections and GT by class; classes with no GT are excluded
inline std::vector<Detection> dets_of_class(const std::vector<Detection>& dets, int cls) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (d.label == cls) out.push_back(d);
  return out;
}

inline GroundTruth gts_of_class(const GroundTruth& gts, int cls) {
  GroundTruth out;
  for (const auto& [id, bl] : gts) {
    BoxList f;
    for (size_t i = 0; i < bl.size(); ++i)
      if (!bl.labels.empty() && bl.labels[i] == cls) f.boxes.push_back(bl.boxes[i]);
    out[id] = std::move(f);  // keep every image key so FPs count
  }
  return out;
}

inline double mean_ap(const std::vector<Detection>& dets, const GroundTruth& gts,
                      const std::vector<int>& classes, double iou_thr) {
  double acc = 0;
  int n = 0;
  for (int c : classes) {
    GroundTruth gc = gts_of_class(gts, c);
    int num_gt = 0;
    for (const auto& [id, bl] : gc) num_gt += static_cast<int>(bl.size());
    if (num_gt == 0) continue;  // not evaluable
    acc += ap_at_iou(dets_of_class(dets, c), gc, iou_thr).ap;
    ++n;
  }
  if (n == 0) throw std::runtime_error("mean_ap: no evaluable class");
  return acc / n;
}

inline double map50(const std::vector<Detection>& dets, const GroundTruth& gts,
                    const std::vector<int>& classes) {
  return mean_ap(dets, gts, classes, 0.5);
}

// mean over IoU 0.50:0.05:0.95
inline double ap_range(const std::vector<Detection>& dets, const GroundTruth& gts,
                       const std::vector<int>& classes) {
  double acc = 0;
  for (int i = 0; i < 10; ++i) acc += mean_ap(dets, gts, classes, 0.5 + 0.05 * i);
  return acc / 10.0;
}

// ---------------------------------------------------------------------------
// corruption benchmark aggregation

using CorruptionResults = std::map<std::pair<int, int>, double>;  // (kind, severity) -> AP

inline double mpc(const CorruptionResults& results) {
  std::vector<std::string> missing;
  double acc = 0;
  for (int k = 0; k < kNumCorruptionKinds; ++k)
    for (int s = 1; s <= kNumSeverities; ++s) {
      auto it = results.find({k, s});
      if (it == results.end())
        missing.push_back(corruption_name(static_cast<CorruptionKind>(k)) + "/" +
                          std::to_string(s));
      else
        acc += it->second;
    }
  if (!missing.empty()) {
    std::string msg = "mpc: missing cells:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  return acc / (kNumCorruptionKinds * kNumSeverities);
}

inline double rpc(double mpc_value, double clean_ap) {
  if (clean_ap <= 0.0) throw std::invalid_argument("rpc: clean AP must be positive");
  return mpc_value / clean_ap;
}

// ---------------------------------------------------------------------------
// detection calibration (D-ECE)

struct CalibrationBin {
  double confidence_mean = 0;
  double precision = 0;
  int count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double d_ece = 0;
  bool empty = false;
};

// Matches detections at IoU 0.5 per class (greedy, score order); unmatched
// detections count as incorrect in their confidence bin.
inline CalibrationReport d_ece(const std::vector<Detection>& dets,
                               const GroundTruth& gts, int num_bins = 10,
                               double iou_thr = 0.5) {
  if (num_bins < 1) throw std::invalid_argument("d_ece: bins >= 1 required");
  CalibrationReport rep;
  rep.bins.resize(static_cast<size_t>(num_bins));
  if (dets.empty()) {
    rep.empty = true;
    return rep;
  }
  std::set<int> classes;
  for (const auto& d : dets) classes.insert(d.label);
  std::vector<std::pair<double, bool>> outcomes;  // (confidence, correct)
  for (int c : classes) {
    std::vector<Detection> dc = dets_of_class(dets, c);
    GroundTruth gc = gts_of_class(gts, c);
    std::stable_sort(dc.begin(), dc.end(), [](const Detection& a, const Detection& b) {
      return a.score > b.score;
    });
    std::map<std::string, std::vector<bool>> used;
    for (const auto& [id, bl] : gc) used[id].assign(bl.size(), false);
    for (const auto& d : dc) {
      bool correct = false;
      auto it = gc.find(d.image_id);
      if (it != gc.end()) {
        double best = iou_thr;
        int bi = -1;
        for (size_t j = 0; j < it->second.size(); ++j) {
          if (used[d.image_id][j]) continue;
          double v = iou(d.box, it->second.boxes[j]);
          if (v >= best) {
            best = v;
            bi = static_cast<int>(j);
          }
        }
        if (bi >= 0) {
          correct = true;
          used[d.image_id][static_cast<size_t>(bi)] = true;
        }
      }
      outcomes.emplace_back(d.score, correct);
    }
  }
  std::vector<double> conf_sum(static_cast<size_t>(num_bins), 0.0);
  std::vector<int> correct_cnt(static_cast<size_t>(num_bins), 0);
  for (const auto& [conf, correct] : outcomes) {
    int b = std::min(static_cast<int>(conf * num_bins), num_bins - 1);
    rep.bins[static_cast<size_t>(b)].count++;
    conf_sum[static_cast<size_t>(b)] += conf;
    if (correct) correct_cnt[static_cast<size_t>(b)]++;
  }
  int total = static_cast<int>(outcomes.size());
  for (int b = 0; b < num_bins; ++b) {
    auto& bin = rep.bins[static_cast<size_t>(b)];
    if (bin.count > 0) {
      bin.confidence_mean = conf_sum[static_cast<size_t>(b)] / bin.count;
      bin.precision = static_cast<double>(correct_cnt[static_cast<size_t>(b)]) / bin.count;
      rep.d_ece += (static_cast<double>(bin.count) / total) *
                   std::fabs(bin.precision - bin.confidence_mean);
    }
  }
  return rep;
}

}  // namespace diffguide
