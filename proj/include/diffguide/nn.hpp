#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

#include "diffguide/autodiff.hpp"

namespace diffguide {
namespace ops {

namespace detail {
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

// im2col for x[C,H,W] -> cols[C*kh*kw, oh*ow]
inline void im2col(const double* x, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int oh, int ow, double* cols) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* dst =
            cols + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) *
                       static_cast<size_t>(oh) * ow;
        for (int i = 0; i < oh; ++i) {
          int yi = i * stride + ki - pad;
          for (int j = 0; j < ow; ++j) {
            int xj = j * stride + kj - pad;
            dst[static_cast<size_t>(i) * ow + j] =
                (yi >= 0 && yi < H && xj >= 0 && xj < W)
                    ? x[(static_cast<size_t>(c) * H + yi) * W + xj]
                    : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* cols, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int oh, int ow, double* x) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* src =
            cols + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) *
                       static_cast<size_t>(oh) * ow;
        for (int i = 0; i < oh; ++i) {
          int yi = i * stride + ki - pad;
          if (yi < 0 || yi >= H) continue;
          for (int j = 0; j < ow; ++j) {
            int xj = j * stride + kj - pad;
            if (xj >= 0 && xj < W)
              x[(static_cast<size_t>(c) * H + yi) * W + xj] +=
                  src[static_cast<size_t>(i) * ow + j];
          }
        }
      }
}
}  // namespace detail

// x[B,C,H,W], w[O,C,kh,kw], b[O] -> [B,O,oh,ow]
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1,
                  int pad = 0) {
  const Tensor& X = x.value();
  const Tensor& W_ = w.value();
  if (X.ndim() != 4 || W_.ndim() != 4 || X.dim(1) != W_.dim(1))
    throw std::invalid_argument("conv2d: bad shapes " + shape_str(X.shape) +
                                " w " + shape_str(W_.shape));
  int B = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  int O = W_.dim(0), kh = W_.dim(2), kw = W_.dim(3);
  if (b.value().ndim() != 1 || b.value().dim(0) != O)
    throw std::invalid_argument("conv2d: bias shape");
  int oh = (H + 2 * pad - kh) / stride + 1;
  int ow = (Wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

  int K = C * kh * kw, P = oh * ow;
  Tensor out({B, O, oh, ow});
  std::vector<double> cols(static_cast<size_t>(K) * P);
  for (int n = 0; n < B; ++n) {
    detail::im2col(X.data.data() + static_cast<size_t>(n) * C * H * Wd, C, H,
                   Wd, kh, kw, stride, pad, oh, ow, cols.data());
    detail::MapM(out.data.data() + static_cast<size_t>(n) * O * P, O, P) =
        detail::CMapM(W_.data.data(), O, K) * detail::CMapM(cols.data(), K, P);
    for (int o = 0; o < O; ++o) {
      double bias = b.value().data[o];
      double* dst = out.data.data() + (static_cast<size_t>(n) * O + o) * P;
      for (int p = 0; p < P; ++p) dst[p] += bias;
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Var::make(
      std::move(out), {x, w, b},
      [xn, wn, bn, B, C, H, Wd, O, kh, kw, stride, pad, oh, ow](Node& nd) {
        int K = C * kh * kw, P = oh * ow;
        std::vector<double> cols(static_cast<size_t>(K) * P);
        Tensor gx, gw, gb;
        if (xn->requires_grad) gx = Tensor(xn->value.shape);
        if (wn->requires_grad) gw = Tensor(wn->value.shape);
        if (bn->requires_grad) gb = Tensor(bn->value.shape);
        for (int n = 0; n < B; ++n) {
          detail::CMapM G(nd.grad.data.data() + static_cast<size_t>(n) * O * P,
                          O, P);
          if (wn->requires_grad || xn->requires_grad)
            detail::im2col(
                xn->value.data.data() + static_cast<size_t>(n) * C * H * Wd, C,
                H, Wd, kh, kw, stride, pad, oh, ow, cols.data());
          if (wn->requires_grad)
            detail::MapM(gw.data.data(), O, K) +=
                G * detail::CMapM(cols.data(), K, P).transpose();
          if (xn->requires_grad) {
            std::vector<double> gcols(static_cast<size_t>(K) * P);
            detail::MapM(gcols.data(), K, P) =
                detail::CMapM(wn->value.data.data(), O, K).transpose() * G;
            detail::col2im_add(gcols.data(), C, H, Wd, kh, kw, stride, pad, oh,
                               ow,
                               gx.data.data() + static_cast<size_t>(n) * C * H * Wd);
          }
          if (bn->requires_grad)
            for (int o = 0; o < O; ++o) {
              const double* src =
                  nd.grad.data.data() + (static_cast<size_t>(n) * O + o) * P;
              for (int p = 0; p < P; ++p) gb.data[o] += src[p];
            }
        }
        if (xn->requires_grad) accumulate(xn, gx);
        if (wn->requires_grad) accumulate(wn, gw);
        if (bn->requires_grad) accumulate(bn, gb);
      });
}

// bilinear resize of x[B,C,H,W] to [B,C,oh,ow] (align_corners = false)
inline Var bilinear_resize(const Var& x, int oh, int ow) {
  const Tensor& X = x.value();
  if (X.ndim() != 4) throw std::invalid_argument("bilinear_resize: need 4-D");
  int B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  double sy = static_cast<double>(H) / oh, sx = static_cast<double>(W) / ow;

  struct Tap {
    int y0, y1, x0, x1;
    double wy, wx;
  };
  std::vector<Tap> taps(static_cast<size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, H - 1.0);
      double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, W - 1.0);
      Tap t;
      t.y0 = static_cast<int>(fy);
      t.x0 = static_cast<int>(fx);
      t.y1 = std::min(t.y0 + 1, H - 1);
      t.x1 = std::min(t.x0 + 1, W - 1);
      t.wy = fy - t.y0;
      t.wx = fx - t.x0;
      taps[static_cast<size_t>(i) * ow + j] = t;
    }

  Tensor out({B, C, oh, ow});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c) {
      const double* src =
          X.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
      double* dst = out.data.data() + (static_cast<size_t>(n) * C + c) *
                                          static_cast<size_t>(oh) * ow;
      for (size_t p = 0; p < taps.size(); ++p) {
        const Tap& t = taps[p];
        double v00 = src[static_cast<size_t>(t.y0) * W + t.x0];
        double v01 = src[static_cast<size_t>(t.y0) * W + t.x1];
        double v10 = src[static_cast<size_t>(t.y1) * W + t.x0];
        double v11 = src[static_cast<size_t>(t.y1) * W + t.x1];
        dst[p] = (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) +
                 t.wy * ((1 - t.wx) * v10 + t.wx * v11);
      }
    }
  auto xn = x.node();
  return Var::make(std::move(out), {x}, [xn, taps, B, C, H, W, oh, ow](Node& nd) {
    Tensor gx(xn->value.shape);
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c) {
        double* dst = gx.data.data() + (static_cast<size_t>(n) * C + c) * H * W;
        const double* g = nd.grad.data.data() +
                          (static_cast<size_t>(n) * C + c) *
                              static_cast<size_t>(oh) * ow;
        for (size_t p = 0; p < taps.size(); ++p) {
          const Tap& t = taps[p];
          dst[static_cast<size_t>(t.y0) * W + t.x0] += g[p] * (1 - t.wy) * (1 - t.wx);
          dst[static_cast<size_t>(t.y0) * W + t.x1] += g[p] * (1 - t.wy) * t.wx;
          dst[static_cast<size_t>(t.y1) * W + t.x0] += g[p] * t.wy * (1 - t.wx);
          dst[static_cast<size_t>(t.y1) * W + t.x1] += g[p] * t.wy * t.wx;
        }
      }
    accumulate(xn, gx);
  });
}

// concat [B,Ci,H,W] tensors along channels
inline Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty");
  int B = xs[0].value().dim(0), H = xs[0].value().dim(2),
      W = xs[0].value().dim(3);
  int Ctot = 0;
  for (const auto& v : xs) {
    const Tensor& t = v.value();
    if (t.ndim() != 4 || t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
      throw std::invalid_argument("concat_channels: shape mismatch");
    Ctot += t.dim(1);
  }
  Tensor out({B, Ctot, H, W});
  size_t plane = static_cast<size_t>(H) * W;
  for (int n = 0; n < B; ++n) {
    size_t coff = 0;
    for (const auto& v : xs) {
      int Ci = v.value().dim(1);
      std::copy_n(v.value().data.data() + static_cast<size_t>(n) * Ci * plane,
                  static_cast<size_t>(Ci) * plane,
                  out.data.data() +
                      (static_cast<size_t>(n) * Ctot + coff) * plane);
      coff += static_cast<size_t>(Ci);
    }
  }
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<int> chans;
  for (const auto& v : xs) {
    nodes.push_back(v.node());
    chans.push_back(v.value().dim(1));
  }
  return Var::make(std::move(out), xs, [nodes, chans, B, Ctot, plane](Node& nd) {
    for (size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k]->requires_grad) continue;
      int Ci = chans[k];
      size_t coff = 0;
      for (size_t j = 0; j < k; ++j) coff += static_cast<size_t>(chans[j]);
      Tensor g(nodes[k]->value.shape);
      for (int n = 0; n < B; ++n)
        std::copy_n(nd.grad.data.data() +
                        (static_cast<size_t>(n) * Ctot + coff) * plane,
                    static_cast<size_t>(Ci) * plane,
                    g.data.data() + static_cast<size_t>(n) * Ci * plane);
      accumulate(nodes[k], g);
    }
  });
}

// RoIAlign on a single feature map x[1,C,H,W]. Boxes are in image pixel
// coordinates; spatial_scale maps image coords to feature coords. One
// bilinear sample at each output cell center.
inline Var roi_align(const Var& x, const std::vector<std::array<double, 4>>& rois,
                     double spatial_scale, int gh, int gw) {
  const Tensor& X = x.value();
  if (X.ndim() != 4 || X.dim(0) != 1)
    throw std::invalid_argument("roi_align: need [1,C,H,W]");
  int C = X.dim(1), H = X.dim(2), W = X.dim(3);
  int N = static_cast<int>(rois.size());

  struct Tap {
    int y0, y1, x0, x1;
    double wy, wx;
  };
  std::vector<Tap> taps(static_cast<size_t>(N) * gh * gw);
  for (int r = 0; r < N; ++r) {
    double x1 = rois[r][0] * spatial_scale, y1 = rois[r][1] * spatial_scale;
    double x2 = rois[r][2] * spatial_scale, y2 = rois[r][3] * spatial_scale;
    double rw = std::max(x2 - x1, 1e-6), rh = std::max(y2 - y1, 1e-6);
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j) {
        double fy = std::clamp(y1 + (i + 0.5) * rh / gh - 0.5, 0.0, H - 1.0);
        double fx = std::clamp(x1 + (j + 0.5) * rw / gw - 0.5, 0.0, W - 1.0);
        Tap t;
        t.y0 = static_cast<int>(fy);
        t.x0 = static_cast<int>(fx);
        t.y1 = std::min(t.y0 + 1, H - 1);
        t.x1 = std::min(t.x0 + 1, W - 1);
        t.wy = fy - t.y0;
        t.wx = fx - t.x0;
        taps[(static_cast<size_t>(r) * gh + i) * gw + j] = t;
      }
  }

  Tensor out({N, C, gh, gw});
  for (int r = 0; r < N; ++r)
    for (int c = 0; c < C; ++c) {
      const double* src = X.data.data() + static_cast<size_t>(c) * H * W;
      double* dst = out.data.data() +
                    (static_cast<size_t>(r) * C + c) * static_cast<size_t>(gh) * gw;
      for (int p = 0; p < gh * gw; ++p) {
        const Tap& t = taps[static_cast<size_t>(r) * gh * gw + p];
        double v00 = src[static_cast<size_t>(t.y0) * W + t.x0];
        double v01 = src[static_cast<size_t>(t.y0) * W + t.x1];
        double v10 = src[static_cast<size_t>(t.y1) * W + t.x0];
        double v11 = src[static_cast<size_t>(t.y1) * W + t.x1];
        dst[p] = (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) +
                 t.wy * ((1 - t.wx) * v10 + t.wx * v11);
      }
    }
  auto xn = x.node();
  return Var::make(std::move(out), {x}, [xn, taps, N, C, H, W, gh, gw](Node& nd) {
    Tensor gx(xn->value.shape);
    for (int r = 0; r < N; ++r)
      for (int c = 0; c < C; ++c) {
        double* dst = gx.data.data() + static_cast<size_t>(c) * H * W;
        const double* g = nd.grad.data.data() +
                          (static_cast<size_t>(r) * C + c) *
                              static_cast<size_t>(gh) * gw;
        for (int p = 0; p < gh * gw; ++p) {
          const Tap& t = taps[static_cast<size_t>(r) * gh * gw + p];
          dst[static_cast<size_t>(t.y0) * W + t.x0] += g[p] * (1 - t.wy) * (1 - t.wx);
          dst[static_cast<size_t>(t.y0) * W + t.x1] += g[p] * (1 - t.wy) * t.wx;
          dst[static_cast<size_t>(t.y1) * W + t.x0] += g[p] * t.wy * (1 - t.wx);
          dst[static_cast<size_t>(t.y1) * W + t.x1] += g[p] * t.wy * t.wx;
        }
      }
    accumulate(xn, gx);
  });
}

// per-channel spatial standardization of x[B,C,H,W]: mean 0, population
// std 1 per (batch, channel) plane, with stabilizer eps
inline Var channel_standardize(const Var& x, double eps = 1e-12) {
  const Tensor& X = x.value();
  if (X.ndim() != 4) throw std::invalid_argument("channel_standardize: need 4-D");
  int B = X.dim(0), C = X.dim(1);
  int n = X.dim(2) * X.dim(3);
  if (n < 2) throw std::invalid_argument("channel_standardize: H*W >= 2 required");
  Tensor out = X;
  std::vector<double> sigmas(static_cast<size_t>(B) * C);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      double* p = out.data.data() + (static_cast<size_t>(b) * C + c) * n;
      double mu = 0;
      for (int i = 0; i < n; ++i) mu += p[i];
      mu /= n;
      double var = 0;
      for (int i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= n;
      double sigma = std::sqrt(var + eps);
      sigmas[static_cast<size_t>(b) * C + c] = sigma;
      for (int i = 0; i < n; ++i) p[i] = (p[i] - mu) / sigma;
    }
  auto xn = x.node();
  return Var::make(std::move(out), {x}, [xn, sigmas, B, C, n](Node& nd) {
    Tensor gx(xn->value.shape);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double* y = nd.value.data.data() + (static_cast<size_t>(b) * C + c) * n;
        const double* g = nd.grad.data.data() + (static_cast<size_t>(b) * C + c) * n;
        double* gx_p = gx.data.data() + (static_cast<size_t>(b) * C + c) * n;
        double gmean = 0, gydot = 0;
        for (int i = 0; i < n; ++i) {
          gmean += g[i];
          gydot += g[i] * y[i];
        }
        gmean /= n;
        gydot /= n;
        double inv_sigma = 1.0 / sigmas[static_cast<size_t>(b) * C + c];
        for (int i = 0; i < n; ++i)
          gx_p[i] = inv_sigma * (g[i] - gmean - y[i] * gydot);
      }
    accumulate(xn, gx);
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Parameter bookkeeping

// Ordered named parameter tree. Order is the registration order, which
// fixes optimizer update order and checkpoint layout.
struct ParamTree {
  std::vector<std::pair<std::string, Var>> params;

  Var add(const std::string& name, Tensor init) {
    Var v = Var::leaf(std::move(init));
    params.emplace_back(name, v);
    return v;
  }
  Var* find(const std::string& name) {
    for (auto& [k, v] : params)
      if (k == name) return &v;
    return nullptr;
  }
  void zero_grad() {
    for (auto& [k, v] : params) v.zero_grad();
  }
  void append(const ParamTree& other, const std::string& prefix) {
    for (const auto& [k, v] : other.params)
      params.emplace_back(prefix + k, v);
  }
};

// Kaiming-style fan-in init for conv/linear weights
inline Tensor kaiming_init(std::vector<int> shape, Rng& rng) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal() * std;
  return t;
}

// SGD with momentum and decoupled-from-nothing classic weight decay
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), wd_(weight_decay) {}

  void step(ParamTree& tree) {
    if (velocity_.size() != tree.params.size())
      velocity_.assign(tree.params.size(), Tensor());
    for (size_t i = 0; i < tree.params.size(); ++i) {
      Var& p = tree.params[i].second;
      if (!p.requires_grad()) continue;
      Tensor& v = velocity_[i];
      if (v.data.empty()) v = Tensor(p.value().shape);
      const Tensor& g = p.grad();
      for (size_t j = 0; j < v.data.size(); ++j) {
        double gj = g.data[j] + wd_ * p.value().data[j];
        v.data[j] = momentum_ * v.data[j] + gj;
        p.value().data[j] -= lr_ * v.data[j];
      }
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_, momentum_, wd_;
  std::vector<Tensor> velocity_;
};

// ema <- decay * ema + (1 - decay) * live, parameter by parameter
inline void ema_update(ParamTree& ema, const ParamTree& live, double decay) {
  if (decay < 0.0 || decay > 1.0)
    throw std::invalid_argument("ema_update: decay outside [0,1]");
  if (ema.params.size() != live.params.size())
    throw std::invalid_argument("ema_update: parameter tree mismatch");
  for (size_t i = 0; i < ema.params.size(); ++i) {
    if (ema.params[i].first != live.params[i].first ||
        !ema.params[i].second.value().same_shape(live.params[i].second.value()))
      throw std::invalid_argument("ema_update: parameter tree mismatch at " +
                                  ema.params[i].first);
    auto& e = ema.params[i].second.value().data;
    const auto& l = live.params[i].second.value().data;
    for (size_t j = 0; j < e.size(); ++j)
      e[j] = decay * e[j] + (1.0 - decay) * l[j];
  }
}

}  // namespace diffguide
