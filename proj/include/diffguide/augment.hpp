#pragma once

#include <complex>

#include "diffguide/boxes.hpp"
#include "diffguide/tensor.hpp"

namespace diffguide {

// unit of ingestion: [3,H,W] image in [0,1] plus labeled boxes
struct ImageSample {
  Tensor image;
  BoxList boxes;
  std::string image_id;
  std::string domain_tag;

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
};

struct AugmentationConfig {
  double p_color_jitter = 0.5;
  double p_contrast = 0.3;
  double p_equalize = 0.2;
  double p_sharpness = 0.3;
  double p_rotate = 0.3;
  double p_shear = 0.2;
  double p_translate = 0.3;
  double brightness_range = 0.2;   // additive, +/-
  double contrast_range = 0.4;     // multiplicative, 1 +/- range
  double sharpness_range = 0.8;
  double rotate_max_deg = 15.0;
  double shear_max = 0.2;
  double translate_max_frac = 0.15;
  double fda_beta = 0.01;
  uint64_t rng_seed = 0;

  void validate() const {
    for (double p : {p_color_jitter, p_contrast, p_equalize, p_sharpness,
                     p_rotate, p_shear, p_translate})
      if (p < 0.0 || p > 1.0)
        throw std::invalid_argument("AugmentationConfig: probability outside [0,1]");
    if (fda_beta < 0.0 || fda_beta > 0.5)
      throw std::invalid_argument("AugmentationConfig: fda_beta outside [0,0.5]");
  }
};

namespace aug_detail {

inline void clip01(Tensor& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

// bilinear sample with border clamp, pixel-center convention
inline double sample_bilinear(const Tensor& img, int c, double y, double x) {
  int H = img.dim(1), W = img.dim(2);
  y = std::clamp(y, 0.0, H - 1.0);
  x = std::clamp(x, 0.0, W - 1.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  double wy = y - y0, wx = x - x0;
  const double* p = img.data.data() + static_cast<size_t>(c) * H * W;
  double v00 = p[static_cast<size_t>(y0) * W + x0], v01 = p[static_cast<size_t>(y0) * W + x1];
  double v10 = p[static_cast<size_t>(y1) * W + x0], v11 = p[static_cast<size_t>(y1) * W + x1];
  return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
}

// 2x3 affine matrix mapping output pixel coords to input pixel coords
struct Affine {
  double a = 1, b = 0, tx = 0, c = 0, d = 1, ty = 0;

  static Affine identity() { return {}; }

  // forward map of a point (for boxes we need output = F(input))
  std::pair<double, double> apply(double x, double y) const {
    return {a * x + b * y + tx, c * x + d * y + ty};
  }

  Affine inverse() const {
    double det = a * d - b * c;
    if (std::fabs(det) < 1e-12) throw std::runtime_error("Affine: singular");
    Affine inv;
    inv.a = d / det;
    inv.b = -b / det;
    inv.c = -c / det;
    inv.d = a / det;
    inv.tx = -(inv.a * tx + inv.b * ty);
    inv.ty = -(inv.c * tx + inv.d * ty);
    return inv;
  }

  static Affine compose(const Affine& f, const Affine& g) {  // f after g
    Affine r;
    r.a = f.a * g.a + f.b * g.c;
    r.b = f.a * g.b + f.b * g.d;
    r.c = f.c * g.a + f.d * g.c;
    r.d = f.c * g.b + f.d * g.d;
    r.tx = f.a * g.tx + f.b * g.ty + f.tx;
    r.ty = f.c * g.tx + f.d * g.ty + f.ty;
    return r;
  }
};

inline Tensor warp_affine(const Tensor& img, const Affine& fwd) {
  int H = img.dim(1), W = img.dim(2);
  Affine inv = fwd.inverse();
  Tensor out(img.shape);
  for (int c = 0; c < img.dim(0); ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        auto [sx, sy] = inv.apply(x, y);
        out.data[(static_cast<size_t>(c) * H + y) * W + x] =
            (sx < -0.5 || sx > W - 0.5 || sy < -0.5 || sy > H - 0.5)
                ? 0.0
                : sample_bilinear(img, c, sy, sx);
      }
  return out;
}

// transform box corners and take the axis-aligned hull
inline Box transform_box(const Box& b, const Affine& fwd) {
  double xs[4] = {b[0], b[2], b[0], b[2]};
  double ys[4] = {b[1], b[1], b[3], b[3]};
  double x1 = 1e30, y1 = 1e30, x2 = -1e30, y2 = -1e30;
  for (int i = 0; i < 4; ++i) {
    auto [px, py] = fwd.apply(xs[i], ys[i]);
    x1 = std::min(x1, px);
    y1 = std::min(y1, py);
    x2 = std::max(x2, px);
    y2 = std::max(y2, py);
  }
  return {x1, y1, x2, y2};
}

// naive DFT, O(n^2) per axis; image sizes here are tiny
inline void dft_1d(std::vector<std::complex<double>>& v, bool inverse) {
  size_t n = v.size();
  std::vector<std::complex<double>> out(n);
  double sgn = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (size_t j = 0; j < n; ++j)
      acc += v[j] * std::polar(1.0, sgn * 2.0 * M_PI * static_cast<double>(k * j) / n);
    out[k] = acc;
  }
  if (inverse)
    for (auto& z : out) z /= static_cast<double>(n);
  v = std::move(out);
}

inline void dft_2d(std::vector<std::complex<double>>& grid, int H, int W,
                   bool inverse) {
  std::vector<std::complex<double>> line;
  for (int y = 0; y < H; ++y) {
    line.assign(grid.begin() + static_cast<long>(y) * W,
                grid.begin() + static_cast<long>(y + 1) * W);
    dft_1d(line, inverse);
    std::copy(line.begin(), line.end(), grid.begin() + static_cast<long>(y) * W);
  }
  line.resize(static_cast<size_t>(H));
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) line[static_cast<size_t>(y)] = grid[static_cast<size_t>(y) * W + x];
    dft_1d(line, inverse);
    for (int y = 0; y < H; ++y) grid[static_cast<size_t>(y) * W + x] = line[static_cast<size_t>(y)];
  }
}

}  // namespace aug_detail

// ---------------------------------------------------------------------------

// FDA: replace the centered low-frequency amplitude window of src with
// ref's, keep src phase. Window side = max(1, round(beta*min(H,W))) for
// beta > 0 and 0 (identity) for beta == 0, on the shifted spectrum.
inline Tensor fda_transfer(const Tensor& src, const Tensor& ref, double beta) {
  if (beta < 0.0 || beta > 0.5)
    throw std::invalid_argument("fda_transfer: beta outside [0, 0.5]");
  if (!src.same_shape(ref))
    throw std::invalid_argument("fda_transfer: shape mismatch (resize ref first)");
  int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  int side = beta == 0.0
                 ? 0
                 : std::max(1, static_cast<int>(std::lround(beta * std::min(H, W))));
  if (side == 0) return src;

  int cy = H / 2, cx = W / 2;  // shifted DC position
  int y0 = cy - side / 2, x0 = cx - side / 2;
  Tensor out(src.shape);
  std::vector<std::complex<double>> fs(static_cast<size_t>(H) * W),
      fr(static_cast<size_t>(H) * W);
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < H * W; ++i) {
      fs[static_cast<size_t>(i)] = src.data[static_cast<size_t>(c) * H * W + i];
      fr[static_cast<size_t>(i)] = ref.data[static_cast<size_t>(c) * H * W + i];
    }
    aug_detail::dft_2d(fs, H, W, false);
    aug_detail::dft_2d(fr, H, W, false);
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        // unshifted index of shifted position (y0+i, x0+j)
        int uy = ((y0 + i) - cy + H) % H;
        int ux = ((x0 + j) - cx + W) % W;
        size_t idx = static_cast<size_t>(uy) * W + ux;
        double amp_ref = std::abs(fr[idx]);
        double phase = std::arg(fs[idx]);
        fs[idx] = std::polar(amp_ref, phase);
      }
    aug_detail::dft_2d(fs, H, W, true);
    for (int i = 0; i < H * W; ++i)
      out.data[static_cast<size_t>(c) * H * W + i] =
          std::clamp(fs[static_cast<size_t>(i)].real(), 0.0, 1.0);
  }
  return out;
}

// Per-channel histogram matching by sorted-rank assignment; monotone in
// the source values by construction.
inline Tensor histogram_match(const Tensor& src, const Tensor& ref) {
  if (src.ndim() != 3 || ref.ndim() != 3 || src.dim(0) != ref.dim(0))
    throw std::invalid_argument("histogram_match: bad shapes");
  int C = src.dim(0);
  int ns = src.dim(1) * src.dim(2), nr = ref.dim(1) * ref.dim(2);
  Tensor out(src.shape);
  for (int c = 0; c < C; ++c) {
    const double* s = src.data.data() + static_cast<size_t>(c) * ns;
    const double* r = ref.data.data() + static_cast<size_t>(c) * nr;
    std::vector<int> order(static_cast<size_t>(ns));
    for (int i = 0; i < ns; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return s[a] < s[b]; });
    std::vector<double> rs(r, r + nr);
    std::sort(rs.begin(), rs.end());
    double* o = out.data.data() + static_cast<size_t>(c) * ns;
    for (int i = 0; i < ns; ++i) {
      double q = ns > 1 ? static_cast<double>(i) / (ns - 1) : 0.0;
      double pos = q * (nr - 1);
      int lo = static_cast<int>(pos);
      int hi = std::min(lo + 1, nr - 1);
      double w = pos - lo;
      o[order[static_cast<size_t>(i)]] =
          (1 - w) * rs[static_cast<size_t>(lo)] + w * rs[static_cast<size_t>(hi)];
    }
  }
  return out;
}

// Per-channel affine remap of src onto ref's mean/std; zero-variance src
// channels get the mean shift only.
inline Tensor pixel_distribution_match(const Tensor& src, const Tensor& ref) {
  if (src.ndim() != 3 || ref.ndim() != 3 || src.dim(0) != ref.dim(0))
    throw std::invalid_argument("pixel_distribution_match: bad shapes");
  int C = src.dim(0);
  int ns = src.dim(1) * src.dim(2), nr = ref.dim(1) * ref.dim(2);
  Tensor out(src.shape);
  for (int c = 0; c < C; ++c) {
    const double* s = src.data.data() + static_cast<size_t>(c) * ns;
    const double* r = ref.data.data() + static_cast<size_t>(c) * nr;
    double ms = 0, mr = 0;
    for (int i = 0; i < ns; ++i) ms += s[i];
    ms /= ns;
    for (int i = 0; i < nr; ++i) mr += r[i];
    mr /= nr;
    double vs = 0, vr = 0;
    for (int i = 0; i < ns; ++i) vs += (s[i] - ms) * (s[i] - ms);
    vs = std::sqrt(vs / ns);
    for (int i = 0; i < nr; ++i) vr += (r[i] - mr) * (r[i] - mr);
    vr = std::sqrt(vr / nr);
    double* o = out.data.data() + static_cast<size_t>(c) * ns;
    double scale = vs > 1e-12 ? vr / vs : 1.0;
    for (int i = 0; i < ns; ++i)
      o[i] = std::clamp((s[i] - ms) * scale + mr, 0.0, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strong augmentation: color ops leave boxes alone; spatial ops move the
// boxes through the same affine map, clip, and drop sub-pixel leftovers.

inline ImageSample strong_augment(const ImageSample& sample,
                                  const AugmentationConfig& cfg, Rng& rng,
                                  aug_detail::Affine* applied_fwd = nullptr) {
  cfg.validate();
  ImageSample out = sample;
  Tensor& img = out.image;
  int H = img.dim(1), W = img.dim(2);

  // color ops
  if (rng.uniform() < cfg.p_color_jitter) {
    double shift = rng.uniform(-cfg.brightness_range, cfg.brightness_range);
    for (double& v : img.data) v += shift;
  }
  if (rng.uniform() < cfg.p_contrast) {
    double f = 1.0 + rng.uniform(-cfg.contrast_range, cfg.contrast_range);
    double mean = img.sum() / static_cast<double>(img.numel());
    for (double& v : img.data) v = (v - mean) * f + mean;
  }
  if (rng.uniform() < cfg.p_equalize) {
    // per-channel histogram equalization on a 256-bin quantization
    for (int c = 0; c < 3; ++c) {
      double* p = img.data.data() + static_cast<size_t>(c) * H * W;
      std::array<int, 256> hist{};
      for (int i = 0; i < H * W; ++i)
        ++hist[static_cast<size_t>(std::clamp(static_cast<int>(p[i] * 255.0), 0, 255))];
      std::array<double, 256> cdf{};
      int acc = 0;
      for (int b = 0; b < 256; ++b) {
        acc += hist[static_cast<size_t>(b)];
        cdf[static_cast<size_t>(b)] = static_cast<double>(acc) / (H * W);
      }
      for (int i = 0; i < H * W; ++i)
        p[i] = cdf[static_cast<size_t>(std::clamp(static_cast<int>(p[i] * 255.0), 0, 255))];
    }
  }
  if (rng.uniform() < cfg.p_sharpness) {
    double amount = rng.uniform(-cfg.sharpness_range, cfg.sharpness_range);
    // unsharp blend against a 3x3 box blur
    Tensor blur(img.shape);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = 0;
          int cnt = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              acc += img.data[(static_cast<size_t>(c) * H + yy) * W + xx];
              ++cnt;
            }
          blur.data[(static_cast<size_t>(c) * H + y) * W + x] = acc / cnt;
        }
    for (size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = img.data[i] + amount * (img.data[i] - blur.data[i]);
  }
  aug_detail::clip01(img);

  // spatial ops compose into a single affine map about the image center
  using aug_detail::Affine;
  Affine fwd = Affine::identity();
  bool spatial = false;
  double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  auto centered = [&](Affine m) {
    Affine to_origin;
    to_origin.tx = -cx;
    to_origin.ty = -cy;
    Affine back;
    back.tx = cx;
    back.ty = cy;
    return Affine::compose(back, Affine::compose(m, to_origin));
  };
  if (rng.uniform() < cfg.p_rotate) {
    double deg = rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg);
    double rad = deg * M_PI / 180.0;
    Affine r;
    r.a = std::cos(rad);
    r.b = -std::sin(rad);
    r.c = std::sin(rad);
    r.d = std::cos(rad);
    fwd = Affine::compose(centered(r), fwd);
    spatial = true;
  }
  if (rng.uniform() < cfg.p_shear) {
    Affine s;
    s.b = rng.uniform(-cfg.shear_max, cfg.shear_max);
    fwd = Affine::compose(centered(s), fwd);
    spatial = true;
  }
  if (rng.uniform() < cfg.p_translate) {
    Affine t;
    t.tx = rng.uniform(-cfg.translate_max_frac, cfg.translate_max_frac) * W;
    t.ty = rng.uniform(-cfg.translate_max_frac, cfg.translate_max_frac) * H;
    fwd = Affine::compose(t, fwd);
    spatial = true;
  }
  if (applied_fwd) *applied_fwd = spatial ? fwd : Affine::identity();
  if (spatial) {
    out.image = aug_detail::warp_affine(img, fwd);
    BoxList moved;
    for (size_t i = 0; i < out.boxes.size(); ++i) {
      Box b = clip_box(aug_detail::transform_box(out.boxes.boxes[i], fwd), W, H);
      if ((b[2] - b[0]) * (b[3] - b[1]) < 1.0) continue;  // dropped
      moved.boxes.push_back(b);
      if (!out.boxes.labels.empty()) moved.labels.push_back(out.boxes.labels[i]);
    }
    out.boxes = std::move(moved);
  }
  return out;
}

// spatial helpers reused by tests and corruption code
namespace aug {
using aug_detail::Affine;
using aug_detail::transform_box;
using aug_detail::warp_affine;
}  // namespace aug

}  // namespace diffguide
