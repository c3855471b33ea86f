#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "bsm/kernels.hpp"

using bsm::Affine;
using bsm::Tensor;
namespace k = bsm::kernels;

namespace {

std::mt19937_64 rng(99);

Tensor random_tensor(int n, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
  Tensor t(n, c, h, w);
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("conv2d forward matches a hand-computed case") {
  // 1x1x2x2 input, single 2x2 filter, no padding -> one output value
  Tensor in(1, 1, 2, 2);
  in.at(0, 0, 0, 0) = 1;
  in.at(0, 0, 0, 1) = 2;
  in.at(0, 0, 1, 0) = 3;
  in.at(0, 0, 1, 1) = 4;
  Tensor w(1, 1, 2, 2);
  w.at(0, 0, 0, 0) = 10;
  w.at(0, 0, 0, 1) = 20;
  w.at(0, 0, 1, 0) = 30;
  w.at(0, 0, 1, 1) = 40;
  Tensor b(1, 1, 1, 1);
  b.data[0] = 5;
  Tensor out(1, 1, 1, 1);
  k::conv2d_forward(out, in, w, b, 0);
  CHECK(out.data[0] == doctest::Approx(5 + 10 + 40 + 90 + 160));
}

TEST_CASE("conv kernels: OpenMP path is bit-identical to the serial reference") {
  const Tensor in = random_tensor(2, 5, 13, 11);
  const Tensor w = random_tensor(4, 5, 3, 3);
  const Tensor b = random_tensor(1, 4, 1, 1);
  Tensor o1(2, 4, 13, 11), o2(2, 4, 13, 11);
  k::serial::conv2d_forward(o1, in, w, b, 1);
  k::conv2d_forward(o2, in, w, b, 1);
  CHECK(o1 == o2);

  const Tensor dout = random_tensor(2, 4, 13, 11);
  Tensor d1(2, 5, 13, 11), d2(2, 5, 13, 11);
  k::serial::conv2d_backward_input(d1, dout, w, 1);
  k::conv2d_backward_input(d2, dout, w, 1);
  CHECK(d1 == d2);

  Tensor dw1(4, 5, 3, 3), dw2(4, 5, 3, 3), db1(1, 4, 1, 1), db2(1, 4, 1, 1);
  k::serial::conv2d_backward_params(dw1, db1, in, dout, 1);
  k::conv2d_backward_params(dw2, db2, in, dout, 1);
  CHECK(dw1 == dw2);
  CHECK(db1 == db2);
}

TEST_CASE("conv2d gradients agree with central finite differences") {
  Tensor in = random_tensor(1, 2, 6, 6);
  Tensor w = random_tensor(3, 2, 3, 3);
  Tensor b = random_tensor(1, 3, 1, 1);
  const Tensor dout = random_tensor(1, 3, 6, 6);

  auto objective = [&]() {
    Tensor out(1, 3, 6, 6);
    k::conv2d_forward(out, in, w, b, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * dout.data[i];
    return s;
  };

  Tensor dw(3, 2, 3, 3), db(1, 3, 1, 1), din(1, 2, 6, 6);
  k::conv2d_backward_params(dw, db, in, dout, 1);
  k::conv2d_backward_input(din, dout, w, 1);

  const double h = 1e-6;
  std::uniform_int_distribution<std::size_t> pick_w(0, w.size() - 1);
  for (int t = 0; t < 10; ++t) {
    const std::size_t i = pick_w(rng);
    const double save = w.data[i];
    w.data[i] = save + h;
    const double up = objective();
    w.data[i] = save - h;
    const double dn = objective();
    w.data[i] = save;
    CHECK(dw.data[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
  }
  std::uniform_int_distribution<std::size_t> pick_in(0, in.size() - 1);
  for (int t = 0; t < 10; ++t) {
    const std::size_t i = pick_in(rng);
    const double save = in.data[i];
    in.data[i] = save + h;
    const double up = objective();
    in.data[i] = save - h;
    const double dn = objective();
    in.data[i] = save;
    CHECK(din.data[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("maxpool2 picks block maxima and routes gradients to them") {
  Tensor in(1, 1, 2, 4);
  const double vals[8] = {1, 5, 2, 2, 3, 0, 9, 2};
  std::copy_n(vals, 8, in.data.begin());
  Tensor out(1, 1, 1, 2);
  std::vector<std::int64_t> arg;
  k::maxpool2_forward(out, arg, in);
  CHECK(out.at(0, 0, 0, 0) == 5);
  CHECK(out.at(0, 0, 0, 1) == 9);

  Tensor dout(1, 1, 1, 2);
  dout.data = {10, 20};
  Tensor din(1, 1, 2, 4);
  k::maxpool2_backward(din, dout, arg);
  CHECK(din.at(0, 0, 0, 1) == 10);
  CHECK(din.at(0, 0, 1, 2) == 20);
  CHECK(din.at(0, 0, 0, 0) == 0);

  const Tensor big = random_tensor(3, 4, 10, 8);
  Tensor p1(3, 4, 5, 4), p2(3, 4, 5, 4);
  std::vector<std::int64_t> a1, a2;
  k::serial::maxpool2_forward(p1, a1, big);
  k::maxpool2_forward(p2, a2, big);
  CHECK(p1 == p2);
  CHECK(a1 == a2);
}

TEST_CASE("bilinear resize preserves constants and has a true transpose backward") {
  Tensor in(1, 1, 4, 4);
  in.fill(3.25);
  Tensor out(1, 1, 8, 8);
  k::resize_bilinear_forward(out, in);
  for (double v : out.data) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));

  // <A x, y> == <x, A^T y>
  const Tensor x = random_tensor(2, 3, 5, 7);
  const Tensor y = random_tensor(2, 3, 10, 14);
  Tensor ax(2, 3, 10, 14);
  k::resize_bilinear_forward(ax, x);
  Tensor aty(2, 3, 5, 7);
  k::resize_bilinear_backward(aty, y);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) lhs += ax.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * aty.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

  Tensor o1(2, 3, 10, 14), o2(2, 3, 10, 14);
  k::serial::resize_bilinear_forward(o1, x);
  k::resize_bilinear_forward(o2, x);
  CHECK(o1 == o2);
}

TEST_CASE("affine warp: identity is exact, out-of-frame reads fill") {
  const Tensor img = random_tensor(1, 1, 9, 9, 0.0, 255.0);
  std::vector<double> out(81);
  k::warp_plane_bilinear(img.data.data(), 9, 9, out.data(), 9, 9, Affine{}, -1.0);
  for (int i = 0; i < 81; ++i) CHECK(out[i] == img.data[i]);

  Affine shift{1, 0, 0, 1, -20.0, 0.0};  // maps everything outside
  k::warp_plane_bilinear(img.data.data(), 9, 9, out.data(), 9, 9, shift, -1.0);
  for (int i = 0; i < 81; ++i) CHECK(out[i] == -1.0);

  std::vector<std::uint8_t> src(81, 1), dst(81, 0);
  k::warp_plane_nearest(src.data(), 9, 9, dst.data(), 9, 9, shift, 7);
  for (int i = 0; i < 81; ++i) CHECK(dst[i] == 7);
}

TEST_CASE("warp: serial and OpenMP agree bitwise") {
  const Tensor img = random_tensor(1, 1, 33, 31, 0.0, 255.0);
  Affine inv{0.9, -0.41, 0.41, 0.9, 3.0, -2.0};
  std::vector<double> o1(33 * 31), o2(33 * 31);
  k::serial::warp_plane_bilinear(img.data.data(), 33, 31, o1.data(), 33, 31, inv, 0.0);
  k::warp_plane_bilinear(img.data.data(), 33, 31, o2.data(), 33, 31, inv, 0.0);
  CHECK(o1 == o2);
}

TEST_CASE("gaussian blur: normalized kernel keeps constants, matches serial") {
  std::vector<double> src(40 * 25, 17.5), out(40 * 25);
  k::gaussian_blur_plane(src.data(), out.data(), 40, 25, 1.7);
  for (double v : out) CHECK(v == doctest::Approx(17.5).epsilon(1e-12));

  const Tensor img = random_tensor(1, 1, 40, 25, 0.0, 255.0);
  std::vector<double> o1(40 * 25), o2(40 * 25);
  k::serial::gaussian_blur_plane(img.data.data(), o1.data(), 40, 25, 2.3);
  k::gaussian_blur_plane(img.data.data(), o2.data(), 40, 25, 2.3);
  CHECK(o1 == o2);

  CHECK_THROWS(k::gaussian_blur_plane(src.data(), out.data(), 40, 25, 0.0));
}

TEST_CASE("channel moments: population definition, serial == OpenMP") {
  Tensor f(1, 1, 2, 2);
  f.data = {1, 2, 3, 4};
  std::vector<double> m, s;
  k::channel_moments(f, m, s);
  CHECK(m[0] == doctest::Approx(2.5));
  CHECK(s[0] == doctest::Approx(1.118033988749895));

  const Tensor big = random_tensor(3, 6, 9, 11);
  std::vector<double> m1, s1, m2, s2;
  k::serial::channel_moments(big, m1, s1);
  k::channel_moments(big, m2, s2);
  CHECK(m1 == m2);
  CHECK(s1 == s2);
}

TEST_CASE("affine compose and inverse round-trip points") {
  Affine f{0.8, -0.3, 0.3, 0.8, 5.0, -2.0};
  const Affine g = f.inverse();
  std::uniform_real_distribution<double> d(-10, 10);
  for (int t = 0; t < 20; ++t) {
    const double x = d(rng), y = d(rng);
    double fx, fy, bx, by;
    f.apply(x, y, fx, fy);
    g.apply(fx, fy, bx, by);
    CHECK(bx == doctest::Approx(x).epsilon(1e-12));
    CHECK(by == doctest::Approx(y).epsilon(1e-12));
  }
  CHECK_THROWS(Affine{0, 0, 0, 0, 1, 1}.inverse());
}
