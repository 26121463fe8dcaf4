#pragma once

#include "diffguide/detector.hpp"

namespace diffguide {

// Named scalar loss terms for one training step. total is composed
// exactly as l_det + lf*(l_align + l_cross) + lo*(l_cls + l_reg).
struct LossReport {
  double l_det = 0, l_align = 0, l_cross = 0, l_cls = 0, l_reg = 0;
  double lambda_feature = 0.5, lambda_object = 1.0;
  double total = 0;
};

inline LossReport total_loss(double l_det, double l_align, double l_cross,
                             double l_cls, double l_reg,
                             double lambda_feature = 0.5,
                             double lambda_object = 1.0) {
  if (lambda_feature < 0 || lambda_object < 0)
    throw std::invalid_argument("total_loss: negative lambda");
  LossReport r;
  r.l_det = l_det;
  r.l_align = l_align;
  r.l_cross = l_cross;
  r.l_cls = l_cls;
  r.l_reg = l_reg;
  r.lambda_feature = lambda_feature;
  r.lambda_object = lambda_object;
  r.total = l_det + lambda_feature * (l_align + l_cross) +
            lambda_object * (l_cls + l_reg);
  return r;
}

// Per-channel spatial standardization of a [C,H,W] map (non-autodiff
// convenience; the Var path uses ops::channel_standardize).
inline Tensor normalize_feature_map(const Tensor& m, double eps = 1e-12) {
  if (m.ndim() != 3) throw std::invalid_argument("normalize_feature_map: need 3-D");
  Var v = Var::constant(Tensor({1, m.dim(0), m.dim(1), m.dim(2)}, m.data));
  Var out = ops::channel_standardize(v, eps);
  return Tensor(m.shape, out.value().data);
}

// Feature alignment loss: sum over levels of mean squared difference of
// standardized maps (1/N_l with N_l = element count of the level).
// Teacher enters as a constant; gradients flow into the student only.
inline Var feature_align_loss(const FeaturePyramid& student,
                              const FeaturePyramid& teacher) {
  Var acc;
  for (int l = 0; l < 4; ++l) {
    const Var& s = student.levels[static_cast<size_t>(l)];
    const Var& t = teacher.levels[static_cast<size_t>(l)];
    if (!s.value().same_shape(t.value()))
      throw std::invalid_argument("feature_align_loss: level " +
                                  std::to_string(l + 1) + " shape mismatch");
    Var sh = ops::channel_standardize(s);
    Var th = ops::detach(ops::channel_standardize(ops::detach(t)));
    Var term = ops::mean(ops::square(ops::sub(sh, th)));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

// Student's own RPN + RoI losses evaluated on the teacher's pyramid with
// ground-truth supervision; only the student head parameters receive
// gradients (the pyramid is detached).
inline Var cross_feature_loss(const FeaturePyramid& teacher_pyr, const BoxList& gt,
                              const DetectorHeads& student_heads, int img_h,
                              int img_w, uint64_t sample_seed) {
  FeaturePyramid detached;
  for (int l = 0; l < 4; ++l)
    detached.levels[static_cast<size_t>(l)] =
        ops::detach(teacher_pyr.levels[static_cast<size_t>(l)]);
  return detection_loss(detached, gt, student_heads, img_h, img_w, sample_seed)
      .total;
}

// Shared-proposal distillation inputs: pool both pyramids with the student's shared proposals and run
// both through the frozen teacher heads. P (teacher side) is detached; Q
// carries gradients back into the student pyramid.
inline std::pair<HeadOutputs, HeadOutputs> shared_roi_predictions(
    const BoxList& proposals, const FeaturePyramid& teacher_pyr,
    const FeaturePyramid& student_pyr, const DetectorHeads& teacher_heads,
    int img_h, int img_w) {
  if (proposals.empty()) {
    HeadOutputs empty;
    empty.cls_logits = Var::constant(Tensor({0, teacher_heads.cfg.num_classes + 1}));
    empty.box_deltas = Var::constant(Tensor({0, 4}));
    return {empty, empty};
  }
  Var pooled_t = pool_roi_features(teacher_pyr, proposals, teacher_heads, img_h, img_w);
  HeadOutputs P = roi_head_forward(ops::detach(pooled_t), teacher_heads);
  P.cls_logits = ops::detach(P.cls_logits);
  P.box_deltas = ops::detach(P.box_deltas);
  Var pooled_s = pool_roi_features(student_pyr, proposals, teacher_heads, img_h, img_w);
  HeadOutputs Q = roi_head_forward(pooled_s, teacher_heads);
  return {P, Q};
}

// Classification distillation: (1/N) sum_i tau^2 KL(softmax(Q_i/tau) || softmax(P_i/tau)).
// P is treated as constant.
inline Var kd_cls_loss(const Var& q_cat, const Var& p_cat, double tau = 1.0) {
  if (tau <= 0.0) throw std::invalid_argument("kd_cls_loss: tau must be positive");
  const Tensor& Q = q_cat.value();
  const Tensor& P = p_cat.value();
  if (Q.ndim() != 2 || !Q.same_shape(P))
    throw std::invalid_argument("kd_cls_loss: shape mismatch");
  int N = Q.dim(0);
  if (N == 0) return Var::constant(Tensor({1}));
  Var qs = ops::scale(q_cat, 1.0 / tau);
  Var logq = ops::log_softmax_rows(qs);
  Var q = ops::softmax_rows(qs);
  Var logp = Var::constant(ops::log_softmax_rows(ops::scale(ops::detach(p_cat), 1.0 / tau)).value());
  Var kl = ops::mul(q, ops::sub(logq, logp));
  return ops::scale(ops::sum(kl), tau * tau / N);
}

// Box distillation: (1/N) sum_i ||Q_i - P_i||_1, P constant.
inline Var kd_reg_loss(const Var& q_bbox, const Var& p_bbox) {
  const Tensor& Q = q_bbox.value();
  if (!Q.same_shape(p_bbox.value()))
    throw std::invalid_argument("kd_reg_loss: shape mismatch");
  int N = Q.dim(0);
  if (N == 0) return Var::constant(Tensor({1}));
  Var diff = ops::sub(q_bbox, ops::detach(p_bbox));
  return ops::scale(ops::sum(ops::abs(diff)), 1.0 / N);
}

}  // namespace diffguide
