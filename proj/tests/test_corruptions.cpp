#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffguide/corruptions.hpp"

#ifdef HAVE_OPENCV_ORACLE
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#endif

using namespace diffguide;

namespace {

Tensor test_image(uint64_t seed = 11, int H = 32, int W = 32) {
  // smooth-ish gradient plus mild noise, stays well inside [0,1]
  Rng rng(seed);
  Tensor img({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        img.at({c, y, x}) = std::clamp(
            0.25 + 0.5 * (x + y) / double(H + W - 2) + 0.05 * rng.normal(), 0.02, 0.98);
  return img;
}

double mse(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / a.data.size();
}

double mean_of(const Tensor& t) {
  double acc = 0;
  for (double v : t.data) acc += v;
  return acc / t.data.size();
}

}  // namespace

TEST_CASE("name round-trips and spec validation") {
  CHECK(corruption_names().size() == kNumCorruptionKinds);
  for (const auto& n : corruption_names())
    CHECK(corruption_name(corruption_from_name(n)) == n);
  CHECK_THROWS_AS(corruption_from_name("rainbow"), std::invalid_argument);
  CHECK_THROWS_AS((CorruptionSpec{CorruptionKind::snow, 0}).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS((CorruptionSpec{CorruptionKind::snow, 6}).validate(),
                  std::invalid_argument);
}

TEST_CASE("every corruption is deterministic and stays in [0,1]") {
  Tensor img = test_image();
  for (int k = 0; k < kNumCorruptionKinds; ++k)
    for (int sev = 1; sev <= 5; ++sev) {
      CorruptionSpec spec{static_cast<CorruptionKind>(k), sev};
      Rng r1(derive_seed(99, corruption_name(spec.kind), sev));
      Rng r2(derive_seed(99, corruption_name(spec.kind), sev));
      Tensor a = apply_corruption(img, spec, r1);
      Tensor b = apply_corruption(img, spec, r2);
      CHECK(a.data == b.data);
      CHECK(a.shape == img.shape);
      for (double v : a.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
}

TEST_CASE("severity increases distortion for noise and blur families") {
  // structured image: mean absolute deviation from clean must be
  // non-decreasing in severity for the noise and blur groups
  int N = 64;
  Tensor img({3, N, N});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < N; ++y)
      for (int x = 0; x < N; ++x) {
        double cb = ((x / 16 + y / 16) % 2) ? 0.75 : 0.25;
        img.at({c, y, x}) = std::clamp(cb + 0.2 * (x - y) / double(2 * N), 0.02, 0.98);
      }
  auto mad = [&](const Tensor& a) {
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += std::fabs(a.data[i] - img.data[i]);
    return acc / a.data.size();
  };
  for (CorruptionKind kind :
       {CorruptionKind::gaussian_noise, CorruptionKind::shot_noise,
        CorruptionKind::impulse_noise, CorruptionKind::defocus_blur,
        CorruptionKind::glass_blur, CorruptionKind::motion_blur,
        CorruptionKind::zoom_blur}) {
    double prev = -1;
    for (int sev = 1; sev <= 5; ++sev) {
      Rng rng(derive_seed(5, corruption_name(kind), sev));
      double d = mad(apply_corruption(img, {kind, sev}, rng));
      CHECK(d >= prev);
      prev = d;
    }
  }
}

TEST_CASE("brightness adds the tabulated offset, fog and snow brighten") {
  Tensor img = test_image();
  Rng rng(1);
  Tensor bright = apply_corruption(img, {CorruptionKind::brightness, 2}, rng);
  int unclipped = 0;
  for (size_t i = 0; i < img.data.size(); ++i)
    if (img.data[i] + corruption_tables::brightness_add[1] <= 1.0) {
      CHECK(bright.data[i] ==
            doctest::Approx(img.data[i] + corruption_tables::brightness_add[1]));
      ++unclipped;
    }
  CHECK(unclipped > 0);

  for (CorruptionKind kind : {CorruptionKind::fog, CorruptionKind::snow, CorruptionKind::frost}) {
    Rng r(derive_seed(2, corruption_name(kind), 0));
    Tensor out = apply_corruption(img, {kind, 3}, r);
    CHECK(mse(out, img) > 1e-5);  // visibly changed
  }
}

TEST_CASE("contrast pulls values toward the mean by the tabulated factor") {
  Tensor img = test_image();
  Rng rng(1);
  Tensor low = apply_corruption(img, {CorruptionKind::contrast, 5}, rng);
  double m = mean_of(img);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(low.data[i] ==
          doctest::Approx((img.data[i] - m) * corruption_tables::contrast_factor[4] + m)
              .epsilon(1e-9));
}

TEST_CASE("gaussian noise severity-1 variance is near the table sigma") {
  Tensor img = Tensor::full({3, 64, 64}, 0.5);
  Rng rng(derive_seed(7, "gn", 0));
  Tensor out = apply_corruption(img, {CorruptionKind::gaussian_noise, 1}, rng);
  double var = mse(out, img);
  double sigma = corruption_tables::gaussian_sigma[0];
  CHECK(std::fabs(std::sqrt(var) - sigma) / sigma < 0.05);
}

TEST_CASE("pixelate produces constant blocks") {
  Tensor img = test_image(3, 40, 40);
  Rng rng(1);
  Tensor out = apply_corruption(img, {CorruptionKind::pixelate, 5}, rng);
  // downscale factor 0.25 -> 10x10 blocks of 4x4 after nearest upsample
  int block = 4;
  for (int y = 0; y < 40; y += block)
    for (int x = 0; x < 40; x += block)
      for (int dy = 0; dy < block; ++dy)
        for (int dx = 0; dx < block; ++dx)
          CHECK(out.at({0, y + dy, x + dx}) == doctest::Approx(out.at({0, y, x})));
}

TEST_CASE("plasma fractal is normalized and deterministic") {
  Rng r1(9), r2(9);
  Tensor a = corrupt_detail::plasma_fractal(17, 17, 0.6, r1);
  Tensor b = corrupt_detail::plasma_fractal(17, 17, 0.6, r2);
  CHECK(a.data == b.data);
  double lo = 1e9, hi = -1e9;
  for (double v : a.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == doctest::Approx(0.0));
  CHECK(hi == doctest::Approx(1.0));
}

TEST_CASE("jpeg roundtrip: high quality is near-lossless, low quality lossy") {
  Tensor img = test_image(13, 24, 24);
  Tensor hi = corrupt_detail::jpeg_roundtrip(img, 95);
  Tensor lo = corrupt_detail::jpeg_roundtrip(img, 7);
  CHECK(mse(hi, img) < mse(lo, img));
  CHECK(mse(hi, img) < 3e-3);  // quantization floor on a noisy input
}

#ifdef HAVE_OPENCV_ORACLE
TEST_CASE("jpeg bytes decode identically through OpenCV's codec") {
  Tensor img = test_image(17, 32, 32);
  std::vector<unsigned char> bytes;
  Tensor ours = corrupt_detail::jpeg_roundtrip(img, 15, &bytes);
  cv::Mat decoded = cv::imdecode(cv::Mat(1, static_cast<int>(bytes.size()), CV_8U,
                                         bytes.data()),
                                 cv::IMREAD_COLOR);
  REQUIRE(!decoded.empty());
  REQUIRE(decoded.rows == 32);
  REQUIRE(decoded.cols == 32);
  // OpenCV returns BGR bytes; compare against our [3,H,W] RGB doubles.
  // Different IDCT implementations may differ by a least significant bit.
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        double ref = decoded.at<cv::Vec3b>(y, x)[2 - c] / 255.0;
        CHECK(std::fabs(ours.at({c, y, x}) - ref) <= 2.0 / 255.0 + 1e-9);
      }
}
#endif
