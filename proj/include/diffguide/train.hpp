#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>

#include "diffguide/model.hpp"

namespace diffguide {

struct TrainOutput {
  std::vector<LossReport> log;
  std::string log_path;
  std::string final_checkpoint;
  std::string final_ema_checkpoint;
};

namespace train_detail {

inline bool augmentation_enabled(const AugmentationConfig& a) {
  return a.p_color_jitter > 0 || a.p_contrast > 0 || a.p_equalize > 0 ||
         a.p_sharpness > 0 || a.p_rotate > 0 || a.p_shear > 0 || a.p_translate > 0;
}

// fixed-width formatting so identical trajectories yield identical logs
inline std::string format_loss_line(int iter, const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "iter %d det %.17g align %.17g cross %.17g cls %.17g reg %.17g "
                "total %.17g",
                iter, r.l_det, r.l_align, r.l_cross, r.l_cls, r.l_reg, r.total);
  return std::string(buf);
}

// turn a (possibly autodiff-attached) pyramid into plain constants
inline FeaturePyramid const_pyramid(const FeaturePyramid& p) {
  FeaturePyramid out;
  for (int l = 0; l < 4; ++l) out.levels[l] = Var::constant(p.levels[l].value());
  return out;
}

}  // namespace train_detail

// teacher_params_out, when non-null and a frozen teacher is in play,
// receives an alias of the teacher's parameter tree so callers can verify
// the teacher stays untouched across the run.
inline TrainOutput train_run(const RunConfig& cfg, const std::string& out_dir,
                             ParamTree* teacher_params_out = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  LoadedDataset data = load_dataset(cfg.train_annotations, cfg.image_root);
  if (data.samples.empty()) throw std::runtime_error("train_run: empty dataset");
  fs::create_directories(out_dir);

  const int B = cfg.batch_size;
  const bool use_aug = train_detail::augmentation_enabled(cfg.aug);
  const bool guided_active =
      cfg.regime == Regime::guided && (cfg.lambda_feature > 0 || cfg.lambda_object > 0);

  // models
  StudentModel student;
  DiffusionDetectorModel diff;      // trainable in diffusion_detector regime
  DiffusionDetectorModel teacher;   // frozen in guided regime
  ParamTree* trainable = nullptr;
  DetectorHeads* live_heads = nullptr;

  if (cfg.regime == Regime::diffusion_detector) {
    diff = DiffusionDetectorModel(cfg, cfg.seed);
    trainable = &diff.params;
    live_heads = &diff.heads;
  } else {
    student = StudentModel(cfg.detector, cfg.seed);
    trainable = &student.params;
    live_heads = &student.heads;
    if (guided_active) {
      teacher = DiffusionDetectorModel(cfg, derive_seed(cfg.seed, "teacher"));
      Checkpoint ck = load_checkpoint(cfg.teacher_checkpoint);
      apply_checkpoint(ck, teacher.params);
      teacher.freeze();
      if (teacher_params_out) *teacher_params_out = teacher.params;
    }
  }

  ParamTree ema = clone_tree(*trainable);
  SgdOptimizer opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);

  std::string log_path = (fs::path(out_dir) / "loss_log.txt").string();
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("train_run: cannot open " + log_path);

  // teacher pyramids are frozen functions of the clean image: cacheable
  std::unordered_map<std::string, FeaturePyramid> teacher_pyr_cache;

  TrainOutput out;
  out.log_path = log_path;
  int cadence = std::max(1, cfg.iterations / 10);
  int n = static_cast<int>(data.samples.size());

  for (int it = 0; it < cfg.iterations; ++it) {
    Rng batch_rng(derive_seed(cfg.seed, "batch", static_cast<uint64_t>(it)));
    trainable->zero_grad();

    Var batch_loss;
    double a_det = 0, a_align = 0, a_cross = 0, a_cls = 0, a_reg = 0;

    for (int b = 0; b < B; ++b) {
      const ImageSample& raw = data.samples[static_cast<size_t>(
          batch_rng.uniform_int(0, n - 1))];
      uint64_t k = static_cast<uint64_t>(it) * static_cast<uint64_t>(B) +
                   static_cast<uint64_t>(b);
      ImageSample sample = raw;
      if (use_aug) {
        Rng aug_rng(derive_seed(cfg.seed, "aug", k));
        sample = strong_augment(raw, cfg.aug, aug_rng);
      }
      int H = sample.height(), W = sample.width();

      FeaturePyramid pyr;
      if (cfg.regime == Regime::diffusion_detector) {
        pyr = diff.forward(sample.image, use_aug ? std::string{} : sample.image_id);
      } else {
        pyr = student.forward(sample.image);
      }

      DetLossParts det = detection_loss(pyr, sample.boxes, *live_heads, H, W,
                                        derive_seed(cfg.seed, "det_sample", k));
      Var img_loss = det.total;
      a_det += det.total.scalar();

      if (guided_active) {
        FeaturePyramid tpyr;
        if (!use_aug) {
          auto hit = teacher_pyr_cache.find(sample.image_id);
          if (hit == teacher_pyr_cache.end()) {
            hit = teacher_pyr_cache
                      .emplace(sample.image_id,
                               train_detail::const_pyramid(
                                   teacher.forward(sample.image, sample.image_id)))
                      .first;
          }
          tpyr = hit->second;
        } else {
          tpyr = train_detail::const_pyramid(teacher.forward(sample.image, {}));
        }

        if (cfg.lambda_feature > 0) {
          Var l_align = feature_align_loss(pyr, tpyr);
          Var l_cross = cross_feature_loss(tpyr, sample.boxes, student.heads, H, W,
                                           derive_seed(cfg.seed, "cross_sample", k));
          a_align += l_align.scalar();
          a_cross += l_cross.scalar();
          img_loss = ops::add(
              img_loss, ops::scale(ops::add(l_align, l_cross), cfg.lambda_feature));
        }
        if (cfg.lambda_object > 0) {
          BoxList props = generate_proposals(pyr, student.heads, H, W,
                                             cfg.detector.rpn_post_nms_train);
          auto [P, Q] = shared_roi_predictions(props, tpyr, pyr, teacher.heads, H, W);
          Var l_cls = kd_cls_loss(Q.cls_logits, P.cls_logits, cfg.tau);
          Var l_reg = kd_reg_loss(Q.box_deltas, P.box_deltas);
          a_cls += l_cls.scalar();
          a_reg += l_reg.scalar();
          img_loss =
              ops::add(img_loss, ops::scale(ops::add(l_cls, l_reg), cfg.lambda_object));
        }
      }

      batch_loss = batch_loss.defined() ? ops::add(batch_loss, img_loss) : img_loss;
    }

    batch_loss = ops::scale(batch_loss, 1.0 / B);
    batch_loss.backward();
    opt.step(*trainable);
    ema_update(ema, *trainable, cfg.ema_decay);

    LossReport rep = total_loss(a_det / B, a_align / B, a_cross / B, a_cls / B,
                                a_reg / B, cfg.lambda_feature, cfg.lambda_object);
    out.log.push_back(rep);
    log << train_detail::format_loss_line(it, rep) << "\n";

    if ((it + 1) % cadence == 0 && it + 1 != cfg.iterations) {
      save_checkpoint(
          (fs::path(out_dir) / ("checkpoint_" + std::to_string(it + 1) + ".ckpt")).string(),
          *trainable, config_hash(cfg));
    }
  }
  log.flush();

  out.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  out.final_ema_checkpoint = (fs::path(out_dir) / "checkpoint_final_ema.ckpt").string();
  save_checkpoint(out.final_checkpoint, *trainable, config_hash(cfg));
  save_checkpoint(out.final_ema_checkpoint, ema, config_hash(cfg));
  return out;
}

}  // namespace diffguide
