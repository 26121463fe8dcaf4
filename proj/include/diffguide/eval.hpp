#pragma once

#include <filesystem>
#include <functional>

#include "diffguide/metrics.hpp"
#include "diffguide/model.hpp"

namespace diffguide {

using DetectFn = std::function<ImageDetections(const ImageSample&)>;

struct CleanReport {
  double map50 = 0;
  double ap_range = 0;
  std::map<int, double> per_class_ap50;
  int images = 0;
};

namespace eval_detail {

inline void collect(const ImageSample& s, const ImageDetections& d,
                    std::vector<Detection>& dets, GroundTruth& gts) {
  gts[s.image_id] = s.boxes;
  for (size_t i = 0; i < d.boxes.size(); ++i) {
    Detection det;
    det.box = d.boxes[i];
    det.label = d.labels[i];
    det.score = d.scores[i];
    det.image_id = s.image_id;
    dets.push_back(det);
  }
}

inline std::vector<int> class_list(int num_classes) {
  std::vector<int> cls(static_cast<size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) cls[static_cast<size_t>(c)] = c;
  return cls;
}

}  // namespace eval_detail

inline CleanReport evaluate_clean(const DetectFn& fn,
                                  const std::vector<ImageSample>& samples,
                                  int num_classes) {
  std::vector<Detection> dets;
  GroundTruth gts;
  for (const auto& s : samples) eval_detail::collect(s, fn(s), dets, gts);
  std::vector<int> cls = eval_detail::class_list(num_classes);
  CleanReport rep;
  rep.images = static_cast<int>(samples.size());
  rep.map50 = map50(dets, gts, cls);
  rep.ap_range = ap_range(dets, gts, cls);
  for (int c : cls) {
    GroundTruth gc = gts_of_class(gts, c);
    int num_gt = 0;
    for (const auto& [id, bl] : gc) num_gt += static_cast<int>(bl.size());
    if (num_gt > 0)
      rep.per_class_ap50[c] = ap_at_iou(dets_of_class(dets, c), gc, 0.5).ap;
  }
  return rep;
}

// All 75 (kind, severity) cells; each cell re-corrupts every eval image
// with a seed derived from (seed, kind, severity, image) and scores
// AP50:95 against the clean ground truth.
inline CorruptionResults evaluate_corruptions(const DetectFn& fn,
                                              const std::vector<ImageSample>& samples,
                                              int num_classes, uint64_t seed) {
  std::vector<int> cls = eval_detail::class_list(num_classes);
  CorruptionResults results;
  for (int k = 0; k < kNumCorruptionKinds; ++k) {
    auto kind = static_cast<CorruptionKind>(k);
    for (int sev = 1; sev <= kNumSeverities; ++sev) {
      std::vector<Detection> dets;
      GroundTruth gts;
      for (const auto& s : samples) {
        Rng rng(derive_seed(seed, "corrupt/" + corruption_name(kind) + "/" + s.image_id,
                            static_cast<uint64_t>(sev)));
        ImageSample c = s;
        c.image = apply_corruption(s.image, {kind, sev}, rng);
        eval_detail::collect(s, fn(c), dets, gts);
      }
      results[{k, sev}] = ap_range(dets, gts, cls);
    }
  }
  return results;
}

inline CalibrationReport evaluate_calibration(const DetectFn& fn,
                                              const std::vector<ImageSample>& samples,
                                              int num_bins = 10) {
  std::vector<Detection> dets;
  GroundTruth gts;
  for (const auto& s : samples) eval_detail::collect(s, fn(s), dets, gts);
  return d_ece(dets, gts, num_bins);
}

// ---------------------------------------------------------------------------
// report files

inline void write_clean_csv(const std::string& path, const CleanReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_clean_csv: cannot open " + path);
  f << "metric,value\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", rep.map50);
  f << "map50," << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", rep.ap_range);
  f << "ap_range," << buf << "\n";
  for (const auto& [c, ap] : rep.per_class_ap50) {
    std::snprintf(buf, sizeof(buf), "%.17g", ap);
    f << "ap50_class_" << c << "," << buf << "\n";
  }
}

inline void write_corruption_csv(const std::string& path,
                                 const CorruptionResults& results) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_corruption_csv: cannot open " + path);
  f << "corruption,severity,ap_range\n";
  for (const auto& [cell, ap] : results) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", ap);
    f << corruption_name(static_cast<CorruptionKind>(cell.first)) << ","
      << cell.second << "," << buf << "\n";
  }
}

inline void write_calibration_csv(const std::string& path,
                                  const CalibrationReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_calibration_csv: cannot open " + path);
  f << "bin,count,confidence_mean,precision\n";
  for (size_t b = 0; b < rep.bins.size(); ++b)
    f << b << "," << rep.bins[b].count << "," << rep.bins[b].confidence_mean << ","
      << rep.bins[b].precision << "\n";
}

inline void write_summary_json(const std::string& path, const CleanReport& clean,
                               const CorruptionResults* corruption,
                               const CalibrationReport* calibration) {
  nlohmann::json j;
  j["map50"] = clean.map50;
  j["ap_range"] = clean.ap_range;
  for (const auto& [c, ap] : clean.per_class_ap50)
    j["per_class_ap50"][std::to_string(c)] = ap;
  if (corruption) {
    double m = mpc(*corruption);
    j["mpc"] = m;
    j["rpc"] = clean.ap_range > 0 ? rpc(m, clean.ap_range) : 0.0;
  }
  if (calibration) j["d_ece"] = calibration->d_ece;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_summary_json: cannot open " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// detector construction for evaluation (EMA or live weights)

inline DetectFn make_detect_fn(const RunConfig& cfg, const std::string& checkpoint_path,
                               uint64_t eval_seed = 0) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (cfg.regime == Regime::diffusion_detector) {
    auto model = std::make_shared<DiffusionDetectorModel>(cfg, eval_seed);
    apply_checkpoint(ck, model->params);
    model->freeze();
    return [model](const ImageSample& s) {
      // no tap caching here: eval inputs may be corrupted variants that
      // share an image id with the clean image
      FeaturePyramid pyr = model->forward(s.image, {});
      return detect(pyr, model->heads, s.height(), s.width());
    };
  }
  auto model = std::make_shared<StudentModel>(cfg.detector, eval_seed);
  apply_checkpoint(ck, model->params);
  freeze_tree(model->backbone.tree);
  freeze_tree(model->heads.tree);
  return [model](const ImageSample& s) {
    return detect(model->forward(s.image), model->heads, s.height(), s.width());
  };
}

}  // namespace diffguide
