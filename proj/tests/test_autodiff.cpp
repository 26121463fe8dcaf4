#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffguide/detector.hpp"

using namespace diffguide;

TEST_CASE("elementwise ops and backward") {
  Var a = Var::leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = Var::leaf(Tensor({2, 2}, {0.5, -1, 2, 0}));
  Var loss = ops::sum(ops::mul(ops::add(a, b), ops::sub(a, b)));
  // sum(a^2 - b^2)
  CHECK(loss.scalar() == doctest::Approx(1 + 4 + 9 + 16 - (0.25 + 1 + 4 + 0)));
  loss.backward();
  for (int i = 0; i < 4; ++i) {
    CHECK(a.grad().data[i] == doctest::Approx(2 * a.value().data[i]));
    CHECK(b.grad().data[i] == doctest::Approx(-2 * b.value().data[i]));
  }
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  Var a = Var::leaf(rng.normal_tensor({3, 4}));
  Var b = Var::leaf(rng.normal_tensor({4, 2}));
  auto f = [&]() {
    return ops::sum(ops::square(ops::matmul(a, b))).scalar();
  };
  Var loss = ops::sum(ops::square(ops::matmul(a, b)));
  loss.backward();
  CHECK(max_relative_error(a.grad(), finite_difference(f, a)) < 1e-6);
  CHECK(max_relative_error(b.grad(), finite_difference(f, b)) < 1e-6);
}

TEST_CASE("conv2d forward matches hand computation") {
  // 1x1x3x3 input, single 2x2 kernel, no pad
  Var x = Var::constant(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  Var w = Var::constant(Tensor({1, 1, 2, 2}, {1, 0, 0, 1}));
  Var b = Var::constant(Tensor({1}, {0.5}));
  Var y = ops::conv2d(x, w, b);
  CHECK(y.value().shape == std::vector<int>{1, 1, 2, 2});
  CHECK(y.value().data[0] == doctest::Approx(1 + 5 + 0.5));
  CHECK(y.value().data[3] == doctest::Approx(5 + 9 + 0.5));
}

TEST_CASE("conv2d gradients vs finite differences") {
  Rng rng(5);
  Var x = Var::leaf(rng.normal_tensor({2, 3, 5, 5}));
  Var w = Var::leaf(rng.normal_tensor({4, 3, 3, 3}));
  Var b = Var::leaf(rng.normal_tensor({4}));
  auto f = [&]() {
    return ops::sum(ops::square(ops::conv2d(x, w, b, 2, 1))).scalar();
  };
  ops::sum(ops::square(ops::conv2d(x, w, b, 2, 1))).backward();
  CHECK(max_relative_error(x.grad(), finite_difference(f, x)) < 1e-5);
  CHECK(max_relative_error(w.grad(), finite_difference(f, w)) < 1e-5);
  CHECK(max_relative_error(b.grad(), finite_difference(f, b)) < 1e-5);
}

TEST_CASE("softmax and log_softmax gradients") {
  Rng rng(3);
  Var x = Var::leaf(rng.normal_tensor({3, 4}));
  auto f1 = [&]() {
    Var s = ops::softmax_rows(x);
    return ops::sum(ops::square(s)).scalar();
  };
  Var l1 = ops::sum(ops::square(ops::softmax_rows(x)));
  l1.backward();
  CHECK(max_relative_error(x.grad(), finite_difference(f1, x)) < 1e-5);

  x.zero_grad();
  auto f2 = [&]() {
    Var s = ops::log_softmax_rows(x);
    return ops::sum(ops::square(s)).scalar();
  };
  ops::sum(ops::square(ops::log_softmax_rows(x))).backward();
  CHECK(max_relative_error(x.grad(), finite_difference(f2, x)) < 1e-5);
}

TEST_CASE("bilinear resize keeps constants and has exact gradients") {
  Var c = Var::constant(Tensor::full({1, 2, 4, 4}, 3.25));
  Var y = ops::bilinear_resize(c, 7, 3);
  for (double v : y.value().data) CHECK(v == doctest::Approx(3.25));

  Rng rng(9);
  Var x = Var::leaf(rng.normal_tensor({1, 2, 4, 4}));
  auto f = [&]() { return ops::sum(ops::square(ops::bilinear_resize(x, 6, 6))).scalar(); };
  ops::sum(ops::square(ops::bilinear_resize(x, 6, 6))).backward();
  CHECK(max_relative_error(x.grad(), finite_difference(f, x)) < 1e-5);
}

TEST_CASE("channel_standardize normalizes and differentiates") {
  Var x = Var::leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  Var y = ops::channel_standardize(x);
  double mean = 0, var = 0;
  for (double v : y.value().data) mean += v;
  mean /= 4;
  for (double v : y.value().data) var += (v - mean) * (v - mean);
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(var / 4 == doctest::Approx(1.0).epsilon(1e-4));

  auto f = [&]() {
    Var h = ops::channel_standardize(x);
    return ops::sum(ops::mul(h, Var::constant(Tensor({1, 1, 2, 2}, {1, -2, 0.5, 3})))).scalar();
  };
  Var loss = ops::sum(ops::mul(ops::channel_standardize(x),
                               Var::constant(Tensor({1, 1, 2, 2}, {1, -2, 0.5, 3}))));
  loss.backward();
  CHECK(max_relative_error(x.grad(), finite_difference(f, x), 1e-6) < 1e-4);
}

TEST_CASE("roi_align constant map pools to the constant") {
  Var x = Var::constant(Tensor::full({1, 3, 8, 8}, 2.5));
  std::vector<std::array<double, 4>> rois = {{1, 1, 6, 6}, {0, 0, 8, 8}};
  Var y = ops::roi_align(x, rois, 1.0, 7, 7);
  for (double v : y.value().data) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("roi_align 2x2 grid on a 4x4 ramp matches hand bilinear") {
  // f(y,x) = y*4 + x
  Tensor ramp({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) ramp.data[i] = i;
  Var x = Var::constant(ramp);
  std::vector<std::array<double, 4>> rois = {{0, 0, 4, 4}};
  Var y = ops::roi_align(x, rois, 1.0, 2, 2);
  // cell centers at (1,1), (1,3), (3,1), (3,3) -> sample coords minus 0.5
  auto hand = [&](double cy, double cx) {
    double fy = cy - 0.5, fx = cx - 0.5;
    int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    double wy = fy - y0, wx = fx - x0;
    auto v = [&](int yy, int xx) { return ramp.data[yy * 4 + xx]; };
    return (1 - wy) * ((1 - wx) * v(y0, x0) + wx * v(y0, x0 + 1)) +
           wy * ((1 - wx) * v(y0 + 1, x0) + wx * v(y0 + 1, x0 + 1));
  };
  CHECK(y.value().data[0] == doctest::Approx(hand(1, 1)));
  CHECK(y.value().data[1] == doctest::Approx(hand(1, 3)));
  CHECK(y.value().data[2] == doctest::Approx(hand(3, 1)));
  CHECK(y.value().data[3] == doctest::Approx(hand(3, 3)));
}

TEST_CASE("roi_align gradient vs finite differences") {
  Rng rng(17);
  Var x = Var::leaf(rng.normal_tensor({1, 2, 6, 6}));
  std::vector<std::array<double, 4>> rois = {{0.5, 1, 4.5, 5}, {2, 2, 6, 6}};
  auto f = [&]() { return ops::sum(ops::square(ops::roi_align(x, rois, 1.0, 3, 3))).scalar(); };
  ops::sum(ops::square(ops::roi_align(x, rois, 1.0, 3, 3))).backward();
  CHECK(max_relative_error(x.grad(), finite_difference(f, x)) < 1e-5);
}

TEST_CASE("concat and select_rows roundtrip gradients") {
  Rng rng(23);
  Var a = Var::leaf(rng.normal_tensor({2, 3}));
  Var b = Var::leaf(rng.normal_tensor({2, 3}));
  auto build = [&]() {
    Var cat = ops::concat_rows({a, b});
    Var sel = ops::select_rows(cat, {3, 0, 0, 2});
    return ops::sum(ops::square(sel));
  };
  auto f = [&]() { return build().scalar(); };
  build().backward();
  CHECK(max_relative_error(a.grad(), finite_difference(f, a)) < 1e-6);
  CHECK(max_relative_error(b.grad(), finite_difference(f, b)) < 1e-6);
}

TEST_CASE("loss op gradients: bce, smooth l1, nll") {
  Rng rng(31);
  Var z = Var::leaf(rng.normal_tensor({5, 1}));
  std::vector<double> t = {1, 0, 1, 1, 0};
  auto f1 = [&]() { return ops::bce_with_logits_mean(z, t).scalar(); };
  ops::bce_with_logits_mean(z, t).backward();
  CHECK(max_relative_error(z.grad(), finite_difference(f1, z)) < 1e-6);

  Var p = Var::leaf(rng.normal_tensor({3, 4}));
  Tensor target = rng.normal_tensor({3, 4});
  auto f2 = [&]() { return ops::smooth_l1_mean(p, target).scalar(); };
  ops::smooth_l1_mean(p, target).backward();
  CHECK(max_relative_error(p.grad(), finite_difference(f2, p)) < 1e-5);

  Var lg = Var::leaf(rng.normal_tensor({4, 3}));
  std::vector<int> labels = {0, 2, 1, 2};
  auto f3 = [&]() {
    return ops::nll_mean(ops::log_softmax_rows(lg), labels).scalar();
  };
  ops::nll_mean(ops::log_softmax_rows(lg), labels).backward();
  CHECK(max_relative_error(lg.grad(), finite_difference(f3, lg)) < 1e-6);
}

TEST_CASE("sgd momentum and ema arithmetic") {
  ParamTree live;
  Var p = live.add("p", Tensor({1}, {1.0}));
  Var loss = ops::mean_square(p);  // d/dp = 2p
  loss.backward();
  SgdOptimizer opt(0.1, 0.9, 0.0);
  opt.step(live);
  CHECK(p.value().data[0] == doctest::Approx(1.0 - 0.1 * 2.0));

  ParamTree ema;
  ema.add("p", Tensor({1}, {1.0}));
  ParamTree zero;
  zero.add("p", Tensor({1}, {0.0}));
  ema_update(ema, zero, 0.999);
  CHECK(ema.params[0].second.value().data[0] == doctest::Approx(0.999));
  ema_update(ema, zero, 1.0);
  CHECK(ema.params[0].second.value().data[0] == doctest::Approx(0.999));
  ema_update(ema, zero, 0.0);
  CHECK(ema.params[0].second.value().data[0] == doctest::Approx(0.0));
}
