#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffguide/augment.hpp"

using namespace diffguide;

namespace {

ImageSample make_sample(uint64_t seed, int H = 16, int W = 16) {
  Rng rng(seed);
  ImageSample s;
  s.image = rng.uniform_tensor({3, H, W}, 0.0, 1.0);
  s.boxes.boxes = {{2, 3, 9, 11}, {5, 5, 14, 13}};
  s.boxes.labels = {0, 1};
  s.image_id = "img";
  s.domain_tag = "src";
  return s;
}

}  // namespace

TEST_CASE("zero probabilities leave image and boxes untouched") {
  AugmentationConfig cfg;
  cfg.p_color_jitter = cfg.p_contrast = cfg.p_equalize = cfg.p_sharpness = 0;
  cfg.p_rotate = cfg.p_shear = cfg.p_translate = 0;
  ImageSample s = make_sample(1);
  Rng rng(2);
  ImageSample out = strong_augment(s, cfg, rng);
  CHECK(out.image.data == s.image.data);
  CHECK(out.boxes.boxes == s.boxes.boxes);
  CHECK(out.boxes.labels == s.boxes.labels);
}

TEST_CASE("pure translation moves boxes by exactly the shift") {
  aug::Affine t;
  t.tx = 3.0;
  t.ty = -2.0;
  Box b = {2, 5, 8, 10};
  Box moved = aug::transform_box(b, t);
  CHECK(moved[0] == doctest::Approx(5.0));
  CHECK(moved[1] == doctest::Approx(3.0));
  CHECK(moved[2] == doctest::Approx(11.0));
  CHECK(moved[3] == doctest::Approx(8.0));
}

TEST_CASE("90-degree rotation hull oracle") {
  // rotate (x,y) -> (-y, x); box [1,2]x[3,5] maps to hull x in [-5,-3],
  // y in [1,2]
  aug::Affine r;
  r.a = 0;
  r.b = -1;
  r.c = 1;
  r.d = 0;
  Box out = aug::transform_box({1, 3, 2, 5}, r);
  CHECK(out[0] == doctest::Approx(-5.0));
  CHECK(out[1] == doctest::Approx(1.0));
  CHECK(out[2] == doctest::Approx(-3.0));
  CHECK(out[3] == doctest::Approx(2.0));
}

TEST_CASE("warp_affine identity and constant preservation") {
  ImageSample s = make_sample(3);
  Tensor same = aug::warp_affine(s.image, aug::Affine::identity());
  for (size_t i = 0; i < same.data.size(); ++i)
    CHECK(same.data[i] == doctest::Approx(s.image.data[i]).epsilon(1e-12));

  Tensor c = Tensor::full({3, 8, 8}, 0.7);
  aug::Affine t;
  t.tx = 1.5;  // interior samples still interpolate a constant
  Tensor warped = aug::warp_affine(c, t);
  CHECK(warped.at({0, 4, 5}) == doctest::Approx(0.7));
}

TEST_CASE("spatial augment keeps boxes inside the image and drops slivers") {
  AugmentationConfig cfg;
  cfg.p_color_jitter = cfg.p_contrast = cfg.p_equalize = cfg.p_sharpness = 0;
  cfg.p_rotate = cfg.p_shear = cfg.p_translate = 1.0;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    ImageSample s = make_sample(10 + seed, 24, 20);
    Rng rng(seed);
    aug::Affine fwd;
    ImageSample out = strong_augment(s, cfg, rng, &fwd);
    CHECK(out.boxes.boxes.size() == out.boxes.labels.size());
    for (const Box& b : out.boxes.boxes) {
      CHECK(b[0] >= 0.0);
      CHECK(b[1] >= 0.0);
      CHECK(b[2] <= 20.0);
      CHECK(b[3] <= 24.0);
      CHECK((b[2] - b[0]) * (b[3] - b[1]) >= 1.0);
    }
    // surviving boxes must match transform-then-clip of some original box
    for (const Box& b : out.boxes.boxes) {
      bool found = false;
      for (const Box& orig : s.boxes.boxes) {
        Box expect = clip_box(aug::transform_box(orig, fwd), 20, 24);
        double diff = 0;
        for (int k = 0; k < 4; ++k) diff += std::fabs(expect[k] - b[k]);
        if (diff < 1e-9) found = true;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("augmentation is deterministic for a fixed rng state") {
  AugmentationConfig cfg;  // defaults exercise every branch with p>0
  ImageSample s = make_sample(42);
  Rng r1(7), r2(7);
  ImageSample a = strong_augment(s, cfg, r1);
  ImageSample b = strong_augment(s, cfg, r2);
  CHECK(a.image.data == b.image.data);
  CHECK(a.boxes.boxes == b.boxes.boxes);
}

TEST_CASE("augmented images stay in [0,1] before spatial fill") {
  AugmentationConfig cfg;
  cfg.p_color_jitter = cfg.p_contrast = cfg.p_equalize = cfg.p_sharpness = 1.0;
  cfg.p_rotate = cfg.p_shear = cfg.p_translate = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ImageSample s = make_sample(100 + seed);
    Rng rng(seed);
    ImageSample out = strong_augment(s, cfg, rng);
    for (double v : out.image.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("bad config values are rejected") {
  AugmentationConfig cfg;
  cfg.p_rotate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.p_rotate = 0.5;
  cfg.fda_beta = 0.7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("fda: beta 0 identity, ref = src identity, shape check") {
  ImageSample s = make_sample(5, 8, 8);
  ImageSample r = make_sample(6, 8, 8);
  Tensor id = fda_transfer(s.image, r.image, 0.0);
  CHECK(id.data == s.image.data);

  Tensor self = fda_transfer(s.image, s.image, 0.25);
  for (size_t i = 0; i < self.data.size(); ++i)
    CHECK(self.data[i] == doctest::Approx(s.image.data[i]).epsilon(1e-9));

  CHECK_THROWS_AS(fda_transfer(s.image, Tensor({3, 4, 4}), 0.1), std::invalid_argument);
  CHECK_THROWS_AS(fda_transfer(s.image, r.image, 0.9), std::invalid_argument);
}

TEST_CASE("fda swaps the DC amplitude: mean follows the reference") {
  // smallest window (side 1) replaces only the DC bin, so output mean must
  // equal ref mean while higher-frequency structure comes from src
  int H = 8, W = 8;
  Rng rng(9);
  Tensor src = rng.uniform_tensor({1, H, W}, 0.2, 0.4);
  Tensor ref = rng.uniform_tensor({1, H, W}, 0.5, 0.9);
  Tensor out = fda_transfer(src, ref, 0.05);  // round(0.05*8)=0 -> side 1

  double msrc = 0, mref = 0, mout = 0;
  for (double v : src.data) msrc += v;
  for (double v : ref.data) mref += v;
  for (double v : out.data) mout += v;
  msrc /= H * W;
  mref /= H * W;
  mout /= H * W;
  // DC of src is positive real, so the swap keeps phase 0 and sets |DC| to
  // ref's -> mean becomes ref's mean (no clipping in these value ranges)
  CHECK(mout == doctest::Approx(mref).epsilon(1e-9));
  CHECK(std::fabs(mout - msrc) > 0.05);

  // off-DC structure is untouched: out - mean(out) == src - mean(src)
  for (size_t i = 0; i < out.data.size(); ++i)
    CHECK(out.data[i] - mout == doctest::Approx(src.data[i] - msrc).epsilon(1e-7));
}

TEST_CASE("histogram match: ramp onto squared ramp follows the reference") {
  // src: 16 evenly spaced values; ref: squares. rank i of src must land on
  // quantile i of ref, i.e. out(sorted) == sorted(ref)
  Tensor src({1, 4, 4}), ref({1, 4, 4});
  for (int i = 0; i < 16; ++i) {
    src.data[i] = i / 15.0;
    ref.data[i] = (i / 15.0) * (i / 15.0);
  }
  Tensor out = histogram_match(src, ref);
  for (int i = 0; i < 16; ++i)
    CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));

  // identity when ref is src itself, and monotone in the source ordering
  Rng rng(4);
  Tensor noisy = rng.uniform_tensor({1, 5, 5}, 0.0, 1.0);
  Tensor same = histogram_match(noisy, noisy);
  for (size_t i = 0; i < noisy.data.size(); ++i)
    CHECK(same.data[i] == doctest::Approx(noisy.data[i]).epsilon(1e-12));
  Tensor other = rng.uniform_tensor({1, 5, 5}, 0.0, 1.0);
  Tensor mapped = histogram_match(noisy, other);
  for (size_t i = 0; i < noisy.data.size(); ++i)
    for (size_t j = 0; j < noisy.data.size(); ++j)
      if (noisy.data[i] < noisy.data[j]) CHECK(mapped.data[i] <= mapped.data[j] + 1e-12);
}

TEST_CASE("pixel distribution match: affine oracle") {
  Tensor src({1, 2, 2}, {0.0, 0.2, 0.4, 0.6});  // mean .3, std sqrt(.05)
  Tensor ref({1, 2, 2}, {0.5, 0.5, 0.9, 0.9});  // mean .7, std .2
  Tensor out = pixel_distribution_match(src, ref);
  double ss = std::sqrt(0.05);
  for (int i = 0; i < 4; ++i)
    CHECK(out.data[i] ==
          doctest::Approx(std::clamp((src.data[i] - 0.3) * (0.2 / ss) + 0.7, 0.0, 1.0))
              .epsilon(1e-9));

  // zero-variance source: mean shift only
  Tensor flat = Tensor::full({1, 2, 2}, 0.25);
  Tensor shifted = pixel_distribution_match(flat, ref);
  for (double v : shifted.data) CHECK(v == doctest::Approx(0.7).epsilon(1e-9));
}
