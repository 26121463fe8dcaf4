#pragma once

#include "diffguide/diffusion.hpp"
#include "diffguide/nn.hpp"

namespace diffguide {

namespace ops {

// x * w[idx] where w is a 1-D vector Var; gradient flows to both
inline Var scale_index(const Var& x, const Var& w, int idx) {
  if (w.value().ndim() != 1 || idx < 0 || idx >= w.value().dim(0))
    throw std::invalid_argument("scale_index: bad weight index");
  double s = w.value().data[static_cast<size_t>(idx)];
  Tensor out = x.value();
  out *= s;
  auto xn = x.node(), wn = w.node();
  return Var::make(std::move(out), {x, w}, [xn, wn, idx, s](Node& n) {
    if (xn->requires_grad) {
      Tensor gx = n.grad;
      gx *= s;
      accumulate(xn, gx);
    }
    if (wn->requires_grad) {
      Tensor gw(wn->value.shape);
      double dot = 0;
      for (size_t i = 0; i < n.grad.data.size(); ++i)
        dot += n.grad.data[i] * xn->value.data[i];
      gw.data[static_cast<size_t>(idx)] = dot;
      accumulate(wn, gw);
    }
  });
}

}  // namespace ops

// Four-level pyramid; level l (1-based) has C_l = base * 2^(l-1) channels
// at spatial size (H / 2^(l+1), W / 2^(l+1)). Stored as [1, C, H, W] Vars.
struct FeaturePyramid {
  std::array<Var, 4> levels;

  static int channels(int base, int level1) { return base << (level1 - 1); }
  static int stride(int level1) { return 1 << (level1 + 1); }

  void check_shapes(int base, int img_h, int img_w) const {
    for (int l = 1; l <= 4; ++l) {
      const Tensor& t = levels[static_cast<size_t>(l - 1)].value();
      if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != channels(base, l) ||
          t.dim(2) != img_h / stride(l) || t.dim(3) != img_w / stride(l))
        throw std::invalid_argument("FeaturePyramid: level " + std::to_string(l) +
                                    " has shape " + shape_str(t.shape));
    }
  }
};

struct FusionConfig {
  int channel_base = 256;   // C_1; doubles per level
  int reduce_channels = 256;
  int tap_channels = 8;     // channels of each denoiser tap
  int T = 5;
};

// Trainable per-level bottlenecks: concat 3 taps -> 1x1 reduce -> relu ->
// 1x1 expand to C_l, then bilinear resample to the pyramid grid.
struct BottleneckParams {
  ParamTree tree;
  std::array<Var, 4> w_reduce, b_reduce, w_expand, b_expand;
  FusionConfig cfg;

  BottleneckParams() = default;
  BottleneckParams(const FusionConfig& c, Rng& rng) : cfg(c) {
    for (int l = 1; l <= 4; ++l) {
      int cl = FeaturePyramid::channels(c.channel_base, l);
      std::string p = "bottleneck.l" + std::to_string(l) + ".";
      w_reduce[l - 1] =
          tree.add(p + "w_reduce",
                   kaiming_init({c.reduce_channels, 3 * c.tap_channels, 1, 1}, rng));
      b_reduce[l - 1] = tree.add(p + "b_reduce", Tensor({c.reduce_channels}));
      w_expand[l - 1] =
          tree.add(p + "w_expand", kaiming_init({cl, c.reduce_channels, 1, 1}, rng));
      b_expand[l - 1] = tree.add(p + "b_expand", Tensor({cl}));
    }
  }
};

inline FeaturePyramid project_bottleneck(const DenoiserFeatures& feats,
                                         const BottleneckParams& params,
                                         int img_h, int img_w) {
  feats.validate();
  FeaturePyramid pyr;
  for (int l = 1; l <= 4; ++l) {
    std::vector<Var> taps;
    for (int k = 0; k < 3; ++k) {
      const Tensor& t = feats.taps[static_cast<size_t>(l - 1)][static_cast<size_t>(k)];
      if (t.dim(0) != params.cfg.tap_channels)
        throw std::runtime_error("project_bottleneck: tap channel mismatch, got " +
                                 std::to_string(t.dim(0)));
      taps.push_back(Var::constant(Tensor({1, t.dim(0), t.dim(1), t.dim(2)}, t.data)));
    }
    Var h = ops::concat_channels(taps);
    h = ops::relu(ops::conv2d(h, params.w_reduce[l - 1], params.b_reduce[l - 1]));
    h = ops::conv2d(h, params.w_expand[l - 1], params.b_expand[l - 1]);
    int oh = img_h / FeaturePyramid::stride(l), ow = img_w / FeaturePyramid::stride(l);
    if (h.value().dim(2) != oh || h.value().dim(3) != ow)
      h = ops::bilinear_resize(h, oh, ow);
    pyr.levels[static_cast<size_t>(l - 1)] = h;
  }
  return pyr;
}

// Learnable aggregation weights over timesteps, one shared vector for all
// pyramid levels. Normalized view is softmax(logits).
struct AggregationWeights {
  ParamTree tree;
  Var logits;  // [T]

  AggregationWeights() = default;
  explicit AggregationWeights(int T) {
    if (T < 1) throw std::invalid_argument("AggregationWeights: T < 1");
    logits = tree.add("fusion.agg_logits", Tensor({T}));
  }

  std::vector<double> normalized() const {
    const auto& l = logits.value().data;
    double mx = *std::max_element(l.begin(), l.end());
    std::vector<double> w(l.size());
    double s = 0;
    for (size_t i = 0; i < l.size(); ++i) s += (w[i] = std::exp(l[i] - mx));
    for (double& v : w) v /= s;
    return w;
  }
};

// out[level] = sum_t softmax(logits)_t * pyramid_t[level]
inline FeaturePyramid aggregate_timesteps(const std::vector<FeaturePyramid>& per_step,
                                          const AggregationWeights& weights) {
  int T = weights.logits.value().dim(0);
  if (static_cast<int>(per_step.size()) != T)
    throw std::invalid_argument("aggregate_timesteps: |pyramids| != T");
  Var w2 = ops::reshape(weights.logits, {1, T});
  Var w = ops::reshape(ops::softmax_rows(w2), {T});
  FeaturePyramid out;
  for (int l = 0; l < 4; ++l) {
    Var acc = ops::scale_index(per_step[0].levels[static_cast<size_t>(l)], w, 0);
    for (int t = 1; t < T; ++t)
      acc = ops::add(acc,
                     ops::scale_index(per_step[static_cast<size_t>(t)]
                                          .levels[static_cast<size_t>(l)],
                                      w, t));
    out.levels[static_cast<size_t>(l)] = acc;
  }
  return out;
}

}  // namespace diffguide
