#pragma once

#include <cstdio>
#include <jpeglib.h>

#include "diffguide/augment.hpp"
#include "diffguide/tensor.hpp"

namespace diffguide {

enum class CorruptionKind {
  gaussian_noise, shot_noise, impulse_noise,
  defocus_blur, glass_blur, motion_blur, zoom_blur,
  snow, frost, fog,
  brightness, contrast, elastic, jpeg, pixelate,
};

inline constexpr int kNumCorruptionKinds = 15;
inline constexpr int kNumSeverities = 5;

struct CorruptionSpec {
  CorruptionKind kind;
  int severity;  // 1..5

  void validate() const {
    if (severity < 1 || severity > kNumSeverities)
      throw std::invalid_argument("CorruptionSpec: severity outside 1..5");
  }
};

inline const std::vector<std::string>& corruption_names() {
  static const std::vector<std::string> names = {
      "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur",
      "glass_blur",     "motion_blur", "zoom_blur",    "snow",
      "frost",          "fog",         "brightness",   "contrast",
      "elastic",        "jpeg",        "pixelate"};
  return names;
}

inline std::string corruption_name(CorruptionKind k) {
  return corruption_names()[static_cast<size_t>(k)];
}

inline CorruptionKind corruption_from_name(const std::string& name) {
  const auto& names = corruption_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<CorruptionKind>(i);
  throw std::invalid_argument("unknown corruption kind: " + name);
}

namespace corrupt_detail {

inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  if (sigma <= 0) return img;
  int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double s = 0;
  for (int i = -radius; i <= radius; ++i)
    s += (k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= s;
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor tmp(img.shape), out(img.shape);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          int xx = std::clamp(x + i, 0, W - 1);
          acc += k[static_cast<size_t>(i + radius)] *
                 img.data[(static_cast<size_t>(c) * H + y) * W + xx];
        }
        tmp.data[(static_cast<size_t>(c) * H + y) * W + x] = acc;
      }
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          int yy = std::clamp(y + i, 0, H - 1);
          acc += k[static_cast<size_t>(i + radius)] *
                 tmp.data[(static_cast<size_t>(c) * H + yy) * W + x];
        }
        out.data[(static_cast<size_t>(c) * H + y) * W + x] = acc;
      }
  return out;
}

inline Tensor kernel_convolve(const Tensor& img, const std::vector<double>& kern,
                              int kh, int kw) {
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out(img.shape);
  int ry = kh / 2, rx = kw / 2;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j) {
            int yy = std::clamp(y + i - ry, 0, H - 1);
            int xx = std::clamp(x + j - rx, 0, W - 1);
            acc += kern[static_cast<size_t>(i) * kw + j] *
                   img.data[(static_cast<size_t>(c) * H + yy) * W + xx];
          }
        out.data[(static_cast<size_t>(c) * H + y) * W + x] = acc;
      }
  return out;
}

inline int poisson_sample(double lambda, Rng& rng) {
  if (lambda <= 0) return 0;
  if (lambda < 30) {
    double L = std::exp(-lambda), p = 1.0;
    int k = 0;
    do {
      ++k;
      p *= rng.uniform();
    } while (p > L);
    return k - 1;
  }
  // normal approximation for large rates
  return std::max(0, static_cast<int>(std::lround(lambda + std::sqrt(lambda) * rng.normal())));
}

// diamond-square style plasma field in [0,1] (fog, frost texture)
inline Tensor plasma_fractal(int H, int W, double roughness, Rng& rng) {
  int n = 1;
  while (n < std::max(H, W)) n <<= 1;
  std::vector<double> g(static_cast<size_t>(n + 1) * (n + 1), 0.0);
  auto at = [&](int y, int x) -> double& {
    return g[static_cast<size_t>(y) * (n + 1) + x];
  };
  at(0, 0) = rng.uniform();
  at(0, n) = rng.uniform();
  at(n, 0) = rng.uniform();
  at(n, n) = rng.uniform();
  double amp = 1.0;
  for (int step = n; step > 1; step /= 2) {
    int half = step / 2;
    for (int y = half; y <= n; y += step)
      for (int x = half; x <= n; x += step)
        at(y, x) = 0.25 * (at(y - half, x - half) + at(y - half, x + half) +
                           at(y + half, x - half) + at(y + half, x + half)) +
                   amp * (rng.uniform() - 0.5);
    for (int y = 0; y <= n; y += half)
      for (int x = (y / half) % 2 == 0 ? half : 0; x <= n; x += step) {
        double acc = 0;
        int cnt = 0;
        if (y - half >= 0) { acc += at(y - half, x); ++cnt; }
        if (y + half <= n) { acc += at(y + half, x); ++cnt; }
        if (x - half >= 0) { acc += at(y, x - half); ++cnt; }
        if (x + half <= n) { acc += at(y, x + half); ++cnt; }
        at(y, x) = acc / cnt + amp * (rng.uniform() - 0.5);
      }
    amp *= roughness;
  }
  double lo = 1e30, hi = -1e30;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      lo = std::min(lo, at(y, x));
      hi = std::max(hi, at(y, x));
    }
  Tensor out({1, H, W});
  double span = std::max(hi - lo, 1e-12);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      out.data[static_cast<size_t>(y) * W + x] = (at(y, x) - lo) / span;
  return out;
}

inline Tensor resize_nearest(const Tensor& img, int oh, int ow) {
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out({C, oh, ow});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        int sy = std::min(static_cast<int>(static_cast<double>(y) * H / oh), H - 1);
        int sx = std::min(static_cast<int>(static_cast<double>(x) * W / ow), W - 1);
        out.data[(static_cast<size_t>(c) * oh + y) * ow + x] =
            img.data[(static_cast<size_t>(c) * H + sy) * W + sx];
      }
  return out;
}

inline Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out({C, oh, ow});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double fy = std::clamp((y + 0.5) * H / oh - 0.5, 0.0, H - 1.0);
        double fx = std::clamp((x + 0.5) * W / ow - 0.5, 0.0, W - 1.0);
        out.data[(static_cast<size_t>(c) * oh + y) * ow + x] =
            aug_detail::sample_bilinear(img, c, fy, fx);
      }
  return out;
}

// JPEG roundtrip through libjpeg at the given quality
inline Tensor jpeg_roundtrip(const Tensor& img, int quality,
                             std::vector<unsigned char>* encoded_out = nullptr) {
  int H = img.dim(1), W = img.dim(2);
  std::vector<unsigned char> rgb(static_cast<size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(static_cast<size_t>(y) * W + x) * 3 + c] = static_cast<unsigned char>(
            std::clamp(std::lround(img.data[(static_cast<size_t>(c) * H + y) * W + x] * 255.0),
                       0l, 255l));

  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  jpeg_mem_dest(&cinfo, &buf, &buf_size);
  cinfo.image_width = static_cast<JDIMENSION>(W);
  cinfo.image_height = static_cast<JDIMENSION>(H);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = rgb.data() + static_cast<size_t>(cinfo.next_scanline) * W * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> bytes(buf, buf + buf_size);
  free(buf);
  if (encoded_out) *encoded_out = bytes;

  jpeg_decompress_struct dinfo;
  jpeg_error_mgr derr;
  dinfo.err = jpeg_std_error(&derr);
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&dinfo, TRUE);
  jpeg_start_decompress(&dinfo);
  std::vector<unsigned char> out_rgb(static_cast<size_t>(H) * W * 3);
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW row = out_rgb.data() + static_cast<size_t>(dinfo.output_scanline) * W * 3;
    jpeg_read_scanlines(&dinfo, &row, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);

  Tensor out(img.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        out.data[(static_cast<size_t>(c) * H + y) * W + x] =
            out_rgb[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0;
  return out;
}

}  // namespace corrupt_detail

// severity tables (index severity-1)
namespace corruption_tables {
inline constexpr double gaussian_sigma[5] = {0.08, 0.12, 0.18, 0.26, 0.38};
inline constexpr double shot_scale[5] = {60, 25, 12, 5, 3};
inline constexpr double impulse_amount[5] = {0.03, 0.06, 0.09, 0.17, 0.27};
inline constexpr int defocus_radius[5] = {2, 3, 4, 6, 8};
inline constexpr double glass_sigma[5] = {0.7, 0.9, 1.1, 1.3, 1.5};
inline constexpr int glass_delta[5] = {1, 1, 2, 2, 3};
inline constexpr int glass_iters[5] = {1, 2, 2, 3, 3};
inline constexpr int motion_length[5] = {5, 7, 9, 13, 17};
inline constexpr double zoom_max[5] = {1.11, 1.16, 1.21, 1.26, 1.31};
inline constexpr double snow_density[5] = {0.05, 0.10, 0.15, 0.22, 0.30};
inline constexpr double frost_image_w[5] = {1.0, 0.9, 0.8, 0.7, 0.6};
inline constexpr double frost_tex_w[5] = {0.2, 0.3, 0.4, 0.45, 0.5};
inline constexpr double fog_weight[5] = {0.15, 0.25, 0.35, 0.45, 0.55};
inline constexpr double brightness_add[5] = {0.1, 0.2, 0.3, 0.4, 0.5};
inline constexpr double contrast_factor[5] = {0.4, 0.3, 0.2, 0.1, 0.05};
inline constexpr double elastic_alpha[5] = {2, 3, 4, 5, 6};
inline constexpr int jpeg_quality[5] = {25, 18, 15, 10, 7};
inline constexpr double pixelate_scale[5] = {0.6, 0.5, 0.4, 0.3, 0.25};
}  // namespace corruption_tables

inline Tensor apply_corruption(const Tensor& image, const CorruptionSpec& spec,
                               Rng& rng) {
  spec.validate();
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("apply_corruption: expect [3,H,W]");
  namespace T = corruption_tables;
  namespace D = corrupt_detail;
  int s = spec.severity - 1;
  int H = image.dim(1), W = image.dim(2);
  Tensor out = image;

  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: {
      double sigma = T::gaussian_sigma[s];
      for (double& v : out.data) v += sigma * rng.normal();
      break;
    }
    case CorruptionKind::shot_noise: {
      double c = T::shot_scale[s];
      for (double& v : out.data) v = D::poisson_sample(v * c, rng) / c;
      break;
    }
    case CorruptionKind::impulse_noise: {
      double amt = T::impulse_amount[s];
      for (double& v : out.data)
        if (rng.uniform() < amt) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      break;
    }
    case CorruptionKind::defocus_blur: {
      int r = T::defocus_radius[s];
      int k = 2 * r + 1;
      std::vector<double> kern(static_cast<size_t>(k) * k, 0.0);
      double sum = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
          if ((i - r) * (i - r) + (j - r) * (j - r) <= r * r)
            sum += (kern[static_cast<size_t>(i) * k + j] = 1.0);
      for (double& v : kern) v /= sum;
      out = D::kernel_convolve(out, kern, k, k);
      break;
    }
    case CorruptionKind::glass_blur: {
      out = D::gaussian_blur(out, T::glass_sigma[s]);
      int delta = T::glass_delta[s];
      for (int it = 0; it < T::glass_iters[s]; ++it)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            int dy = rng.uniform_int(-delta, delta);
            int dx = rng.uniform_int(-delta, delta);
            int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
            for (int c = 0; c < 3; ++c)
              std::swap(out.data[(static_cast<size_t>(c) * H + y) * W + x],
                        out.data[(static_cast<size_t>(c) * H + yy) * W + xx]);
          }
      out = D::gaussian_blur(out, T::glass_sigma[s] * 0.5);
      break;
    }
    case CorruptionKind::motion_blur: {
      int len = T::motion_length[s];
      double angle = rng.uniform(0.0, M_PI);
      int k = len | 1;
      std::vector<double> kern(static_cast<size_t>(k) * k, 0.0);
      int r = k / 2;
      for (int i = -r; i <= r; ++i) {
        int y = r + static_cast<int>(std::lround(i * std::sin(angle)));
        int x = r + static_cast<int>(std::lround(i * std::cos(angle)));
        if (y >= 0 && y < k && x >= 0 && x < k)
          kern[static_cast<size_t>(y) * k + x] = 1.0;
      }
      double sum = 0;
      for (double v : kern) sum += v;
      for (double& v : kern) v /= sum;
      out = D::kernel_convolve(out, kern, k, k);
      break;
    }
    case CorruptionKind::zoom_blur: {
      Tensor acc = image;
      int count = 1;
      for (double z = 1.01; z <= T::zoom_max[s] + 1e-9; z += 0.01) {
        int zh = static_cast<int>(std::lround(H * z)), zw = static_cast<int>(std::lround(W * z));
        Tensor big = D::resize_bilinear(image, zh, zw);
        int oy = (zh - H) / 2, ox = (zw - W) / 2;
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
              acc.data[(static_cast<size_t>(c) * H + y) * W + x] +=
                  big.data[(static_cast<size_t>(c) * zh + y + oy) * zw + x + ox];
        ++count;
      }
      for (double& v : acc.data) v /= count;
      out = acc;
      break;
    }
    case CorruptionKind::snow: {
      double density = T::snow_density[s];
      Tensor layer({1, H, W});
      for (double& v : layer.data)
        v = rng.uniform() < density ? rng.uniform(0.6, 1.0) : 0.0;
      layer = D::gaussian_blur(layer, 0.6);
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < H * W; ++i) {
          double& v = out.data[static_cast<size_t>(c) * H * W + i];
          double sv = layer.data[static_cast<size_t>(i)];
          v = v * (1.0 - 0.3 * density * 5.0) + 0.15 * density * 5.0;  // whiten
          v = std::max(v, sv);
        }
      break;
    }
    case CorruptionKind::frost: {
      // deterministic procedural frost texture, fixed internal seed
      Rng frng(derive_seed(1234567, "frost_texture"));
      Tensor tex = D::plasma_fractal(H, W, 0.8, frng);
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < H * W; ++i) {
          double& v = out.data[static_cast<size_t>(c) * H * W + i];
          v = T::frost_image_w[s] * v +
              T::frost_tex_w[s] * (0.6 + 0.4 * tex.data[static_cast<size_t>(i)]);
        }
      break;
    }
    case CorruptionKind::fog: {
      Tensor f = D::plasma_fractal(H, W, 0.7, rng);
      double w = T::fog_weight[s];
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < H * W; ++i) {
          double& v = out.data[static_cast<size_t>(c) * H * W + i];
          double fw = w * f.data[static_cast<size_t>(i)];
          v = v * (1.0 - fw) + 0.85 * fw;
        }
      break;
    }
    case CorruptionKind::brightness: {
      for (double& v : out.data) v += T::brightness_add[s];
      break;
    }
    case CorruptionKind::contrast: {
      double mean = out.sum() / static_cast<double>(out.numel());
      for (double& v : out.data) v = (v - mean) * T::contrast_factor[s] + mean;
      break;
    }
    case CorruptionKind::elastic: {
      double alpha = T::elastic_alpha[s];
      Tensor dx({1, H, W}), dy({1, H, W});
      for (double& v : dx.data) v = rng.uniform(-1.0, 1.0);
      for (double& v : dy.data) v = rng.uniform(-1.0, 1.0);
      dx = D::gaussian_blur(dx, 4.0);
      dy = D::gaussian_blur(dy, 4.0);
      // renormalize the smoothed fields to unit max amplitude
      auto normalize = [](Tensor& t) {
        double m = 0;
        for (double v : t.data) m = std::max(m, std::fabs(v));
        if (m > 1e-12)
          for (double& v : t.data) v /= m;
      };
      normalize(dx);
      normalize(dy);
      Tensor warped(out.shape);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            warped.data[(static_cast<size_t>(c) * H + y) * W + x] =
                aug_detail::sample_bilinear(
                    out, c, y + alpha * dy.data[static_cast<size_t>(y) * W + x],
                    x + alpha * dx.data[static_cast<size_t>(y) * W + x]);
      out = warped;
      break;
    }
    case CorruptionKind::jpeg: {
      out = D::jpeg_roundtrip(out, T::jpeg_quality[s]);
      break;
    }
    case CorruptionKind::pixelate: {
      double sc = T::pixelate_scale[s];
      int sh = std::max(1, static_cast<int>(H * sc)), sw = std::max(1, static_cast<int>(W * sc));
      out = D::resize_nearest(D::resize_nearest(out, sh, sw), H, W);
      break;
    }
  }
  aug_detail::clip01(out);
  return out;
}

}  // namespace diffguide
