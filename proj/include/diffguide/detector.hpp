#pragma once

#include "diffguide/boxes.hpp"
#include "diffguide/fusion.hpp"
#include "diffguide/nn.hpp"

namespace diffguide {
namespace ops {

// mean BCE-with-logits against constant 0/1 targets
inline Var bce_with_logits_mean(const Var& logits, const std::vector<double>& targets) {
  const Tensor& Z = logits.value();
  if (Z.numel() != static_cast<int64_t>(targets.size()))
    throw std::invalid_argument("bce_with_logits_mean: size mismatch");
  int64_t M = Z.numel();
  if (M == 0) return Var::constant(Tensor({1}));
  Tensor out({1});
  double acc = 0;
  for (int64_t i = 0; i < M; ++i) {
    double z = Z.data[static_cast<size_t>(i)], y = targets[static_cast<size_t>(i)];
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
  }
  out.data[0] = acc / static_cast<double>(M);
  auto zn = logits.node();
  return Var::make(std::move(out), {logits}, [zn, targets, M](Node& n) {
    Tensor g(zn->value.shape);
    double go = n.grad.data[0] / static_cast<double>(M);
    for (int64_t i = 0; i < M; ++i) {
      double z = zn->value.data[static_cast<size_t>(i)];
      double s = 1.0 / (1.0 + std::exp(-z));
      g.data[static_cast<size_t>(i)] = go * (s - targets[static_cast<size_t>(i)]);
    }
    accumulate(zn, g);
  });
}

// elementwise-mean smooth L1 against constant targets
inline Var smooth_l1_mean(const Var& pred, const Tensor& target, double beta = 1.0) {
  const Tensor& P = pred.value();
  if (!P.same_shape(target))
    throw std::invalid_argument("smooth_l1_mean: shape mismatch");
  int64_t M = P.numel();
  if (M == 0) return Var::constant(Tensor({1}));
  Tensor out({1});
  double acc = 0;
  for (int64_t i = 0; i < M; ++i) {
    double d = P.data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
    double a = std::fabs(d);
    acc += (a < beta) ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  out.data[0] = acc / static_cast<double>(M);
  auto pn = pred.node();
  return Var::make(std::move(out), {pred}, [pn, target, beta, M](Node& n) {
    Tensor g(pn->value.shape);
    double go = n.grad.data[0] / static_cast<double>(M);
    for (int64_t i = 0; i < M; ++i) {
      double d = pn->value.data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
      g.data[static_cast<size_t>(i)] =
          go * ((std::fabs(d) < beta) ? d / beta : (d > 0 ? 1.0 : -1.0));
    }
    accumulate(pn, g);
  });
}

// -mean_i logp[i, labels[i]] on a [N,C] log-prob tensor
inline Var nll_mean(const Var& logp, const std::vector<int>& labels) {
  const Tensor& L = logp.value();
  if (L.ndim() != 2 || L.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("nll_mean: shape mismatch");
  int N = L.dim(0), C = L.dim(1);
  if (N == 0) return Var::constant(Tensor({1}));
  Tensor out({1});
  double acc = 0;
  for (int i = 0; i < N; ++i)
    acc -= L.data[static_cast<size_t>(i) * C + labels[static_cast<size_t>(i)]];
  out.data[0] = acc / N;
  auto ln = logp.node();
  return Var::make(std::move(out), {logp}, [ln, labels, N, C](Node& n) {
    Tensor g(ln->value.shape);
    double go = n.grad.data[0] / N;
    for (int i = 0; i < N; ++i)
      g.data[static_cast<size_t>(i) * C + labels[static_cast<size_t>(i)]] -= go;
    accumulate(ln, g);
  });
}

inline Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
  int C = xs[0].value().dim(1), N = 0;
  for (const auto& v : xs) {
    if (v.value().ndim() != 2 || v.value().dim(1) != C)
      throw std::invalid_argument("concat_rows: shape mismatch");
    N += v.value().dim(0);
  }
  Tensor out({N, C});
  size_t off = 0;
  for (const auto& v : xs) {
    std::copy(v.value().data.begin(), v.value().data.end(),
              out.data.begin() + static_cast<long>(off));
    off += v.value().data.size();
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& v : xs) nodes.push_back(v.node());
  return Var::make(std::move(out), xs, [nodes](Node& n) {
    size_t off = 0;
    for (const auto& nd : nodes) {
      size_t sz = nd->value.data.size();
      if (nd->requires_grad) {
        Tensor g(nd->value.shape);
        std::copy_n(n.grad.data.begin() + static_cast<long>(off), sz, g.data.begin());
        accumulate(nd, g);
      }
      off += sz;
    }
  });
}

inline Var linear(const Var& x, const Var& w, const Var& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace ops

// ---------------------------------------------------------------------------

struct DetectorConfig {
  int channel_base = 32;       // pyramid C_1; the full-scale value is 256
  int num_classes = 2;         // categories without background
  int rpn_channels = 32;
  int roi_reduce_channels = 16;
  int pool_size = 7;
  int head_dim = 128;          // RoI feature dimensionality d
  double anchor_scale = 4.0;   // anchor side = scale * level stride
  int rpn_pre_nms = 512;
  int rpn_post_nms_train = 512;
  int rpn_post_nms_eval = 1000;
  double rpn_nms_iou = 0.7;
  int rpn_batch = 64;
  double rpn_pos_frac = 0.5;
  double rpn_pos_iou = 0.5;
  double rpn_neg_iou = 0.3;
  int roi_batch = 32;
  double roi_pos_frac = 0.5;
  double roi_pos_iou = 0.5;
  double score_thr = 0.05;
  double det_nms_iou = 0.5;
  int max_dets = 100;
};

struct HeadOutputs {
  Var cls_logits;  // [N, C+1]
  Var box_deltas;  // [N, 4]
};

struct RoIBatch {
  BoxList proposals;
  Var pooled_student;  // [N, d]
  Var pooled_teacher;  // [N, d]
};

// RPN + RoI pooling + RoI head parameters; shared between the student
// detector (conv backbone) and the diffusion detector (fused pyramid).
struct DetectorHeads {
  DetectorConfig cfg;
  ParamTree tree;
  std::array<Var, 4> rpn_conv_w, rpn_conv_b, rpn_obj_w, rpn_obj_b, rpn_box_w,
      rpn_box_b;
  std::array<Var, 4> reduce_w, reduce_b;
  Var proj_w, proj_b;
  Var fc1_w, fc1_b, fc2_w, fc2_b;
  Var cls_w, cls_b, reg_w, reg_b;

  DetectorHeads() = default;
  DetectorHeads(const DetectorConfig& c, Rng& rng) : cfg(c) {
    for (int l = 1; l <= 4; ++l) {
      int cl = FeaturePyramid::channels(c.channel_base, l);
      std::string p = "rpn.l" + std::to_string(l) + ".";
      rpn_conv_w[l - 1] = tree.add(p + "conv_w",
                                   kaiming_init({c.rpn_channels, cl, 3, 3}, rng));
      rpn_conv_b[l - 1] = tree.add(p + "conv_b", Tensor({c.rpn_channels}));
      rpn_obj_w[l - 1] =
          tree.add(p + "obj_w", kaiming_init({1, c.rpn_channels, 1, 1}, rng));
      rpn_obj_b[l - 1] = tree.add(p + "obj_b", Tensor({1}));
      rpn_box_w[l - 1] =
          tree.add(p + "box_w", kaiming_init({4, c.rpn_channels, 1, 1}, rng));
      rpn_box_b[l - 1] = tree.add(p + "box_b", Tensor({4}));
    }
    for (int l = 1; l <= 4; ++l) {
      int cl = FeaturePyramid::channels(c.channel_base, l);
      std::string p = "pool.l" + std::to_string(l) + ".";
      reduce_w[l - 1] = tree.add(
          p + "reduce_w", kaiming_init({c.roi_reduce_channels, cl, 1, 1}, rng));
      reduce_b[l - 1] = tree.add(p + "reduce_b", Tensor({c.roi_reduce_channels}));
    }
    int flat = c.roi_reduce_channels * c.pool_size * c.pool_size;
    proj_w = tree.add("pool.proj_w", kaiming_init({flat, c.head_dim}, rng));
    proj_b = tree.add("pool.proj_b", Tensor({c.head_dim}));
    fc1_w = tree.add("head.fc1_w", kaiming_init({c.head_dim, c.head_dim}, rng));
    fc1_b = tree.add("head.fc1_b", Tensor({c.head_dim}));
    fc2_w = tree.add("head.fc2_w", kaiming_init({c.head_dim, c.head_dim}, rng));
    fc2_b = tree.add("head.fc2_b", Tensor({c.head_dim}));
    cls_w = tree.add("head.cls_w",
                     kaiming_init({c.head_dim, c.num_classes + 1}, rng));
    cls_b = tree.add("head.cls_b", Tensor({c.num_classes + 1}));
    reg_w = tree.add("head.reg_w", kaiming_init({c.head_dim, 4}, rng));
    reg_b = tree.add("head.reg_b", Tensor({4}));
  }
};

// Small conv backbone emitting the four-level pyramid contract.
struct StudentBackbone {
  DetectorConfig cfg;
  ParamTree tree;
  std::vector<Var> conv_w, conv_b;   // stem(2) + 3 downsamples
  std::array<Var, 4> fpn_w, fpn_b;   // 1x1 per level

  StudentBackbone() = default;
  StudentBackbone(const DetectorConfig& c, Rng& rng) : cfg(c) {
    int base = c.channel_base;
    std::vector<std::array<int, 2>> io = {
        {3, base}, {base, base}, {base, 2 * base}, {2 * base, 4 * base},
        {4 * base, 8 * base}};
    for (size_t i = 0; i < io.size(); ++i) {
      conv_w.push_back(tree.add("backbone.c" + std::to_string(i) + ".w",
                                kaiming_init({io[i][1], io[i][0], 3, 3}, rng)));
      conv_b.push_back(
          tree.add("backbone.c" + std::to_string(i) + ".b", Tensor({io[i][1]})));
    }
    for (int l = 1; l <= 4; ++l) {
      int cl = FeaturePyramid::channels(base, l);
      fpn_w[l - 1] = tree.add("fpn.l" + std::to_string(l) + ".w",
                              kaiming_init({cl, cl, 1, 1}, rng));
      fpn_b[l - 1] = tree.add("fpn.l" + std::to_string(l) + ".b", Tensor({cl}));
    }
  }

  FeaturePyramid forward(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != 3)
      throw std::invalid_argument("StudentBackbone: expect [3,H,W]");
    Var h = Var::constant(
        Tensor({1, 3, image.dim(1), image.dim(2)}, image.data));
    FeaturePyramid pyr;
    for (size_t i = 0; i < conv_w.size(); ++i) {
      h = ops::relu(ops::conv2d(h, conv_w[i], conv_b[i], 2, 1));
      if (i >= 1) {
        int l = static_cast<int>(i) - 1;  // conv1 output is level 1 (stride 4)
        pyr.levels[static_cast<size_t>(l)] =
            ops::conv2d(h, fpn_w[static_cast<size_t>(l)], fpn_b[static_cast<size_t>(l)]);
      }
    }
    return pyr;
  }
};

inline void freeze_tree(ParamTree& tree) {
  for (auto& [k, v] : tree.params) v.node()->requires_grad = false;
}

// ---------------------------------------------------------------------------
// RPN

// one square anchor per cell per level
inline BoxList level_anchors(int level1, int fh, int fw, const DetectorConfig& cfg) {
  int stride = FeaturePyramid::stride(level1);
  double side = cfg.anchor_scale * stride;
  BoxList out;
  out.boxes.reserve(static_cast<size_t>(fh) * fw);
  for (int i = 0; i < fh; ++i)
    for (int j = 0; j < fw; ++j) {
      double cx = (j + 0.5) * stride, cy = (i + 0.5) * stride;
      out.boxes.push_back({cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2});
    }
  return out;
}

struct RpnOutputs {
  std::array<Var, 4> obj_logits;  // [1,1,h,w]
  std::array<Var, 4> box_deltas;  // [1,4,h,w]
};

inline RpnOutputs rpn_forward(const FeaturePyramid& pyr, const DetectorHeads& heads) {
  RpnOutputs out;
  for (int l = 0; l < 4; ++l) {
    Var h = ops::relu(ops::conv2d(pyr.levels[static_cast<size_t>(l)],
                                  heads.rpn_conv_w[static_cast<size_t>(l)],
                                  heads.rpn_conv_b[static_cast<size_t>(l)], 1, 1));
    out.obj_logits[static_cast<size_t>(l)] =
        ops::conv2d(h, heads.rpn_obj_w[static_cast<size_t>(l)],
                    heads.rpn_obj_b[static_cast<size_t>(l)]);
    out.box_deltas[static_cast<size_t>(l)] =
        ops::conv2d(h, heads.rpn_box_w[static_cast<size_t>(l)],
                    heads.rpn_box_b[static_cast<size_t>(l)]);
  }
  return out;
}

// Decode, clip, score-sort, NMS. Proposal boxes are detached values.
inline BoxList generate_proposals(const FeaturePyramid& pyr,
                                  const DetectorHeads& heads, int img_h,
                                  int img_w, int post_nms) {
  RpnOutputs rpn = rpn_forward(pyr, heads);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (int l = 0; l < 4; ++l) {
    const Tensor& obj = rpn.obj_logits[static_cast<size_t>(l)].value();
    const Tensor& dlt = rpn.box_deltas[static_cast<size_t>(l)].value();
    int fh = obj.dim(2), fw = obj.dim(3);
    BoxList anchors = level_anchors(l + 1, fh, fw, heads.cfg);
    int A = fh * fw;
    for (int a = 0; a < A; ++a) {
      std::array<double, 4> d;
      for (int k = 0; k < 4; ++k)
        d[static_cast<size_t>(k)] = dlt.data[static_cast<size_t>(k) * A + a];
      Box b = clip_box(decode_box(d, anchors.boxes[static_cast<size_t>(a)]),
                       img_w, img_h);
      if (b[2] - b[0] < 1.0 || b[3] - b[1] < 1.0) continue;
      boxes.push_back(b);
      scores.push_back(obj.data[static_cast<size_t>(a)]);
    }
  }
  // pre-NMS top-k
  std::vector<int> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  if (static_cast<int>(order.size()) > heads.cfg.rpn_pre_nms)
    order.resize(static_cast<size_t>(heads.cfg.rpn_pre_nms));
  std::vector<Box> kb;
  std::vector<double> ks;
  for (int i : order) {
    kb.push_back(boxes[static_cast<size_t>(i)]);
    ks.push_back(scores[static_cast<size_t>(i)]);
  }
  std::vector<int> keep = nms(kb, ks, heads.cfg.rpn_nms_iou);
  if (static_cast<int>(keep.size()) > post_nms) keep.resize(static_cast<size_t>(post_nms));
  BoxList out;
  for (int i : keep) {
    out.boxes.push_back(kb[static_cast<size_t>(i)]);
    out.scores.push_back(1.0 / (1.0 + std::exp(-ks[static_cast<size_t>(i)])));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RoI pooling + head

inline int assign_level(const Box& b, int img_h, int img_w) {
  double s = std::sqrt(box_area(b));
  double m = std::min(img_h, img_w);
  if (s <= 0) return 1;
  int k = 4 + static_cast<int>(std::floor(std::log2(s / m + 1e-12)));
  return std::clamp(k, 1, 4);
}

// Fixed-size per-RoI features: per-level 1x1 reduce, RoIAlign to
// pool_size^2, flatten, linear projection to d. Row order matches the
// input proposal order.
inline Var pool_roi_features(const FeaturePyramid& pyr, const BoxList& proposals,
                             const DetectorHeads& heads, int img_h, int img_w) {
  const DetectorConfig& cfg = heads.cfg;
  int N = static_cast<int>(proposals.size());
  if (N == 0) return Var::constant(Tensor({0, cfg.head_dim}));
  std::array<std::vector<int>, 4> by_level;
  for (int i = 0; i < N; ++i)
    by_level[static_cast<size_t>(assign_level(proposals.boxes[static_cast<size_t>(i)],
                                              img_h, img_w) - 1)]
        .push_back(i);
  std::vector<Var> level_rows;
  std::vector<int> row_of(static_cast<size_t>(N));
  int row = 0;
  for (int l = 0; l < 4; ++l) {
    const auto& idx = by_level[static_cast<size_t>(l)];
    if (idx.empty()) continue;
    Var red = ops::relu(ops::conv2d(pyr.levels[static_cast<size_t>(l)],
                                    heads.reduce_w[static_cast<size_t>(l)],
                                    heads.reduce_b[static_cast<size_t>(l)]));
    std::vector<std::array<double, 4>> rois;
    for (int i : idx) rois.push_back(proposals.boxes[static_cast<size_t>(i)]);
    double scale = 1.0 / FeaturePyramid::stride(l + 1);
    Var pooled = ops::roi_align(red, rois, scale, cfg.pool_size, cfg.pool_size);
    Var flat = ops::reshape(pooled, {static_cast<int>(idx.size()),
                                     cfg.roi_reduce_channels * cfg.pool_size *
                                         cfg.pool_size});
    level_rows.push_back(flat);
    for (int i : idx) row_of[static_cast<size_t>(i)] = row++;
  }
  Var all = level_rows.size() == 1 ? level_rows[0] : ops::concat_rows(level_rows);
  std::vector<int> perm(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) perm[static_cast<size_t>(i)] = row_of[static_cast<size_t>(i)];
  Var ordered = ops::select_rows(all, perm);
  return ops::linear(ordered, heads.proj_w, heads.proj_b);
}

inline HeadOutputs roi_head_forward(const Var& pooled, const DetectorHeads& heads) {
  if (pooled.value().ndim() != 2 || pooled.value().dim(1) != heads.cfg.head_dim)
    throw std::invalid_argument("roi_head_forward: pooled width mismatch");
  if (pooled.value().dim(0) == 0) {
    HeadOutputs out;
    out.cls_logits = Var::constant(Tensor({0, heads.cfg.num_classes + 1}));
    out.box_deltas = Var::constant(Tensor({0, 4}));
    return out;
  }
  Var h = ops::relu(ops::linear(pooled, heads.fc1_w, heads.fc1_b));
  h = ops::relu(ops::linear(h, heads.fc2_w, heads.fc2_b));
  HeadOutputs out;
  out.cls_logits = ops::linear(h, heads.cls_w, heads.cls_b);
  out.box_deltas = ops::linear(h, heads.reg_w, heads.reg_b);
  return out;
}

// ---------------------------------------------------------------------------
// Detection loss

struct DetLossParts {
  Var rpn_obj, rpn_box, roi_cls, roi_box;
  Var total;
};

// RPN assignment + sampling, RoI assignment + sampling, four loss terms.
// Assignment and sampling depend only on geometry and the sample seed, so
// the loss is locally smooth in the head parameters.
inline DetLossParts detection_loss(const FeaturePyramid& pyr, const BoxList& gt,
                                   const DetectorHeads& heads, int img_h,
                                   int img_w, uint64_t sample_seed) {
  const DetectorConfig& cfg = heads.cfg;
  RpnOutputs rpn = rpn_forward(pyr, heads);

  // flatten anchors and per-anchor logit/delta row indices
  std::vector<Box> anchors;
  std::vector<std::pair<int, int>> loc;  // (level, offset)
  for (int l = 0; l < 4; ++l) {
    const Tensor& obj = rpn.obj_logits[static_cast<size_t>(l)].value();
    int fh = obj.dim(2), fw = obj.dim(3);
    BoxList la = level_anchors(l + 1, fh, fw, heads.cfg);
    for (int a = 0; a < fh * fw; ++a) {
      anchors.push_back(la.boxes[static_cast<size_t>(a)]);
      loc.emplace_back(l, a);
    }
  }
  int A = static_cast<int>(anchors.size());

  // assignment: 1 = positive, 0 = negative, -1 = ignore
  std::vector<int> assign(static_cast<size_t>(A), 0);
  std::vector<int> matched_gt(static_cast<size_t>(A), -1);
  if (!gt.empty()) {
    std::vector<double> best_gt_iou(gt.size(), 0.0);
    std::vector<int> best_gt_anchor(gt.size(), -1);
    for (int a = 0; a < A; ++a) {
      double best = 0;
      int bi = -1;
      for (size_t g = 0; g < gt.size(); ++g) {
        double v = iou(anchors[static_cast<size_t>(a)], gt.boxes[g]);
        if (v > best) {
          best = v;
          bi = static_cast<int>(g);
        }
        if (v > best_gt_iou[g]) {
          best_gt_iou[g] = v;
          best_gt_anchor[g] = a;
        }
      }
      if (best >= cfg.rpn_pos_iou) {
        assign[static_cast<size_t>(a)] = 1;
        matched_gt[static_cast<size_t>(a)] = bi;
      } else if (best >= cfg.rpn_neg_iou) {
        assign[static_cast<size_t>(a)] = -1;
      }
    }
    for (size_t g = 0; g < gt.size(); ++g)
      if (best_gt_anchor[g] >= 0 && best_gt_iou[g] > 0.05) {
        assign[static_cast<size_t>(best_gt_anchor[g])] = 1;
        matched_gt[static_cast<size_t>(best_gt_anchor[g])] = static_cast<int>(g);
      }
  }

  Rng rng(derive_seed(sample_seed, "rpn_sample"));
  std::vector<int> pos, neg;
  for (int a = 0; a < A; ++a) {
    if (assign[static_cast<size_t>(a)] == 1) pos.push_back(a);
    else if (assign[static_cast<size_t>(a)] == 0) neg.push_back(a);
  }
  int want_pos = std::min(static_cast<int>(pos.size()),
                          static_cast<int>(cfg.rpn_batch * cfg.rpn_pos_frac));
  rng.shuffle(pos);
  pos.resize(static_cast<size_t>(want_pos));
  int want_neg = std::min(static_cast<int>(neg.size()), cfg.rpn_batch - want_pos);
  rng.shuffle(neg);
  neg.resize(static_cast<size_t>(want_neg));

  // gather objectness logits for the sampled anchors
  std::array<Var, 4> obj_rows, box_rows;
  for (int l = 0; l < 4; ++l) {
    const Tensor& t = rpn.obj_logits[static_cast<size_t>(l)].value();
    obj_rows[static_cast<size_t>(l)] = ops::reshape(
        rpn.obj_logits[static_cast<size_t>(l)], {t.dim(2) * t.dim(3), 1});
    const Tensor& d = rpn.box_deltas[static_cast<size_t>(l)].value();
    // [1,4,h,w] -> rows [h*w, 4] needs a transpose; select per-coordinate
    box_rows[static_cast<size_t>(l)] =
        ops::reshape(rpn.box_deltas[static_cast<size_t>(l)], {4, d.dim(2) * d.dim(3)});
  }

  std::vector<int> sampled = pos;
  sampled.insert(sampled.end(), neg.begin(), neg.end());
  Var rpn_obj_loss;
  if (!sampled.empty()) {
    std::vector<Var> rows;
    std::vector<double> targets;
    for (int a : sampled) {
      auto [l, off] = loc[static_cast<size_t>(a)];
      rows.push_back(ops::select_rows(obj_rows[static_cast<size_t>(l)], {off}));
      targets.push_back(assign[static_cast<size_t>(a)] == 1 ? 1.0 : 0.0);
    }
    Var z = rows.size() == 1 ? rows[0] : ops::concat_rows(rows);
    rpn_obj_loss = ops::bce_with_logits_mean(z, targets);
  } else {
    rpn_obj_loss = Var::constant(Tensor({1}));
  }

  Var rpn_box_loss;
  if (!pos.empty()) {
    Tensor target({static_cast<int>(pos.size()), 4});
    for (size_t i = 0; i < pos.size(); ++i) {
      int a = pos[i];
      auto enc = encode_box(gt.boxes[static_cast<size_t>(matched_gt[static_cast<size_t>(a)])],
                            anchors[static_cast<size_t>(a)]);
      for (int k = 0; k < 4; ++k)
        target.data[i * 4 + static_cast<size_t>(k)] = enc[static_cast<size_t>(k)];
    }
    // predicted deltas [P,4]: the level tensor is [4, h*w], so each
    // anchor's coordinates sit at offsets {k*hw + a}
    std::vector<Var> delta_rows;
    for (size_t i = 0; i < pos.size(); ++i) {
      int a = pos[i];
      auto [l, off] = loc[static_cast<size_t>(a)];
      int hw = box_rows[static_cast<size_t>(l)].value().dim(1);
      Var flat = ops::reshape(box_rows[static_cast<size_t>(l)], {4 * hw, 1});
      std::vector<int> idx = {off, hw + off, 2 * hw + off, 3 * hw + off};
      Var four = ops::select_rows(flat, idx);  // [4,1]
      delta_rows.push_back(ops::reshape(four, {1, 4}));
    }
    Var pred = delta_rows.size() == 1 ? delta_rows[0] : ops::concat_rows(delta_rows);
    rpn_box_loss = ops::smooth_l1_mean(pred, target);
  } else {
    rpn_box_loss = Var::constant(Tensor({1}));
  }

  // ---- RoI stage ----
  BoxList proposals = generate_proposals(pyr, heads, img_h, img_w,
                                         cfg.rpn_post_nms_train);
  for (const auto& b : gt.boxes) proposals.boxes.push_back(b);  // standard trick
  proposals.scores.clear();

  int Np = static_cast<int>(proposals.size());
  std::vector<int> roi_label(static_cast<size_t>(Np), 0);  // 0 = background
  std::vector<int> roi_gt(static_cast<size_t>(Np), -1);
  for (int i = 0; i < Np; ++i) {
    double best = 0;
    int bi = -1;
    for (size_t g = 0; g < gt.size(); ++g) {
      double v = iou(proposals.boxes[static_cast<size_t>(i)], gt.boxes[g]);
      if (v > best) {
        best = v;
        bi = static_cast<int>(g);
      }
    }
    if (bi >= 0 && best >= cfg.roi_pos_iou) {
      roi_label[static_cast<size_t>(i)] =
          gt.labels.empty() ? 1 : gt.labels[static_cast<size_t>(bi)] + 1;
      roi_gt[static_cast<size_t>(i)] = bi;
    }
  }
  Rng roi_rng(derive_seed(sample_seed, "roi_sample"));
  std::vector<int> rpos, rneg;
  for (int i = 0; i < Np; ++i)
    (roi_label[static_cast<size_t>(i)] > 0 ? rpos : rneg).push_back(i);
  int rp = std::min(static_cast<int>(rpos.size()),
                    static_cast<int>(cfg.roi_batch * cfg.roi_pos_frac));
  roi_rng.shuffle(rpos);
  rpos.resize(static_cast<size_t>(rp));
  int rn = std::min(static_cast<int>(rneg.size()), cfg.roi_batch - rp);
  roi_rng.shuffle(rneg);
  rneg.resize(static_cast<size_t>(rn));
  std::vector<int> rsel = rpos;
  rsel.insert(rsel.end(), rneg.begin(), rneg.end());

  Var roi_cls_loss = Var::constant(Tensor({1}));
  Var roi_box_loss = Var::constant(Tensor({1}));
  if (!rsel.empty()) {
    BoxList sel;
    std::vector<int> labels;
    for (int i : rsel) {
      sel.boxes.push_back(proposals.boxes[static_cast<size_t>(i)]);
      labels.push_back(roi_label[static_cast<size_t>(i)]);
    }
    Var pooled = pool_roi_features(pyr, sel, heads, img_h, img_w);
    HeadOutputs ho = roi_head_forward(pooled, heads);
    roi_cls_loss = ops::nll_mean(ops::log_softmax_rows(ho.cls_logits), labels);
    if (!rpos.empty()) {
      std::vector<int> pos_rows;
      Tensor target({static_cast<int>(rpos.size()), 4});
      for (size_t i = 0; i < rpos.size(); ++i) {
        pos_rows.push_back(static_cast<int>(i));  // positives are first in rsel
        auto enc = encode_box(
            gt.boxes[static_cast<size_t>(roi_gt[static_cast<size_t>(rpos[i])])],
            proposals.boxes[static_cast<size_t>(rpos[i])]);
        for (int k = 0; k < 4; ++k)
          target.data[i * 4 + static_cast<size_t>(k)] = enc[static_cast<size_t>(k)];
      }
      Var pred = ops::select_rows(ho.box_deltas, pos_rows);
      roi_box_loss = ops::smooth_l1_mean(pred, target);
    }
  }

  DetLossParts out;
  out.rpn_obj = rpn_obj_loss;
  out.rpn_box = rpn_box_loss;
  out.roi_cls = roi_cls_loss;
  out.roi_box = roi_box_loss;
  out.total = ops::add(ops::add(rpn_obj_loss, rpn_box_loss),
                       ops::add(roi_cls_loss, roi_box_loss));
  return out;
}

// ---------------------------------------------------------------------------
// Inference

struct ImageDetections {
  std::vector<Box> boxes;
  std::vector<int> labels;     // 0-based category ids
  std::vector<double> scores;
};

inline ImageDetections detect(const FeaturePyramid& pyr, const DetectorHeads& heads,
                              int img_h, int img_w) {
  const DetectorConfig& cfg = heads.cfg;
  BoxList proposals =
      generate_proposals(pyr, heads, img_h, img_w, cfg.rpn_post_nms_eval);
  ImageDetections out;
  if (proposals.empty()) return out;
  Var pooled = pool_roi_features(pyr, proposals, heads, img_h, img_w);
  HeadOutputs ho = roi_head_forward(pooled, heads);
  const Tensor& logits = ho.cls_logits.value();
  const Tensor& deltas = ho.box_deltas.value();
  int N = logits.dim(0), C1 = logits.dim(1);
  std::vector<Box> cand_boxes;
  std::vector<int> cand_labels;
  std::vector<double> cand_scores;
  for (int i = 0; i < N; ++i) {
    const double* row = logits.data.data() + static_cast<size_t>(i) * C1;
    double mx = *std::max_element(row, row + C1), s = 0;
    std::vector<double> p(static_cast<size_t>(C1));
    for (int c = 0; c < C1; ++c) s += (p[static_cast<size_t>(c)] = std::exp(row[c] - mx));
    for (auto& v : p) v /= s;
    std::array<double, 4> d;
    for (int k = 0; k < 4; ++k)
      d[static_cast<size_t>(k)] = deltas.data[static_cast<size_t>(i) * 4 + k];
    Box b = clip_box(decode_box(d, proposals.boxes[static_cast<size_t>(i)]),
                     img_w, img_h);
    if (b[2] - b[0] < 1.0 || b[3] - b[1] < 1.0) continue;
    for (int c = 1; c < C1; ++c)
      if (p[static_cast<size_t>(c)] >= cfg.score_thr) {
        cand_boxes.push_back(b);
        cand_labels.push_back(c - 1);
        cand_scores.push_back(p[static_cast<size_t>(c)]);
      }
  }
  // per-class NMS
  for (int c = 0; c < C1 - 1; ++c) {
    std::vector<Box> cb;
    std::vector<double> cs;
    std::vector<size_t> ci;
    for (size_t i = 0; i < cand_boxes.size(); ++i)
      if (cand_labels[i] == c) {
        cb.push_back(cand_boxes[i]);
        cs.push_back(cand_scores[i]);
        ci.push_back(i);
      }
    for (int k : nms(cb, cs, cfg.det_nms_iou)) {
      out.boxes.push_back(cb[static_cast<size_t>(k)]);
      out.labels.push_back(c);
      out.scores.push_back(cs[static_cast<size_t>(k)]);
    }
  }
  // keep top max_dets by score
  std::vector<int> order(out.boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return out.scores[a] > out.scores[b]; });
  if (static_cast<int>(order.size()) > cfg.max_dets)
    order.resize(static_cast<size_t>(cfg.max_dets));
  ImageDetections top;
  for (int i : order) {
    top.boxes.push_back(out.boxes[static_cast<size_t>(i)]);
    top.labels.push_back(out.labels[static_cast<size_t>(i)]);
    top.scores.push_back(out.scores[static_cast<size_t>(i)]);
  }
  return top;
}

}  // namespace diffguide
