// Times the OpenMP kernels against their serial references on representative
// sizes and reports the speedup plus the largest elementwise difference
// (expected to be exactly zero).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bsm/kernels.hpp"

using bsm::Affine;
using bsm::Tensor;
namespace k = bsm::kernels;

namespace {

std::mt19937_64 rng(12345);

Tensor random_tensor(int n, int c, int h, int w) {
  Tensor t(n, c, h, w);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (double& v : t.data) v = d(rng);
  return t;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void report(const char* name, double serial_ms, double omp_ms, double diff) {
  std::printf("%-26s %10.3f %10.3f %9.2fx %12.3e\n", name, serial_ms, omp_ms,
              serial_ms / omp_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
#ifdef _OPENMP
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
#else
  std::printf("threads: 1 (OpenMP disabled), reps: %d\n", reps);
#endif
  std::printf("%-26s %10s %10s %9s %12s\n", "kernel", "serial(ms)", "openmp(ms)",
              "speedup", "max|diff|");

  {
    const Tensor in = random_tensor(4, 32, 64, 64);
    const Tensor w = random_tensor(32, 32, 3, 3);
    const Tensor b = random_tensor(1, 32, 1, 1);
    Tensor o1(4, 32, 64, 64), o2(4, 32, 64, 64);
    const double ts = time_ms([&] { k::serial::conv2d_forward(o1, in, w, b, 1); }, reps);
    const double tp = time_ms([&] { k::conv2d_forward(o2, in, w, b, 1); }, reps);
    report("conv2d_forward", ts, tp, max_diff(o1, o2));

    const Tensor dout = random_tensor(4, 32, 64, 64);
    Tensor d1(4, 32, 64, 64), d2(4, 32, 64, 64);
    const double ts2 =
        time_ms([&] { k::serial::conv2d_backward_input(d1, dout, w, 1); }, reps);
    const double tp2 = time_ms([&] { k::conv2d_backward_input(d2, dout, w, 1); }, reps);
    report("conv2d_backward_input", ts2, tp2, max_diff(d1, d2));

    Tensor dw1(32, 32, 3, 3), dw2(32, 32, 3, 3), db1(1, 32, 1, 1), db2(1, 32, 1, 1);
    const double ts3 =
        time_ms([&] { k::serial::conv2d_backward_params(dw1, db1, in, dout, 1); }, reps);
    const double tp3 =
        time_ms([&] { k::conv2d_backward_params(dw2, db2, in, dout, 1); }, reps);
    report("conv2d_backward_params", ts3, tp3,
           std::max(max_diff(dw1, dw2), max_diff(db1, db2)));
  }

  {
    const Tensor in = random_tensor(8, 16, 128, 128);
    Tensor o1(8, 16, 64, 64), o2(8, 16, 64, 64);
    std::vector<std::int64_t> a1, a2;
    const double ts = time_ms([&] { k::serial::maxpool2_forward(o1, a1, in); }, reps);
    const double tp = time_ms([&] { k::maxpool2_forward(o2, a2, in); }, reps);
    report("maxpool2_forward", ts, tp, max_diff(o1, o2));

    Tensor u1(8, 16, 256, 256), u2(8, 16, 256, 256);
    const double ts2 = time_ms([&] { k::serial::resize_bilinear_forward(u1, in); }, reps);
    const double tp2 = time_ms([&] { k::resize_bilinear_forward(u2, in); }, reps);
    report("resize_bilinear_x2", ts2, tp2, max_diff(u1, u2));
  }

  {
    const Tensor img = random_tensor(1, 1, 512, 512);
    std::vector<double> o1(512 * 512), o2(512 * 512);
    Affine inv{0.96, -0.27, 0.27, 0.96, 12.0, -7.0};
    const double ts = time_ms(
        [&] { k::serial::warp_plane_bilinear(img.data.data(), 512, 512, o1.data(), 512, 512, inv, 0.0); },
        reps);
    const double tp = time_ms(
        [&] { k::warp_plane_bilinear(img.data.data(), 512, 512, o2.data(), 512, 512, inv, 0.0); },
        reps);
    report("warp_plane_bilinear", ts, tp, max_diff(o1, o2));

    const double ts2 = time_ms(
        [&] { k::serial::gaussian_blur_plane(img.data.data(), o1.data(), 512, 512, 2.0); },
        reps);
    const double tp2 = time_ms(
        [&] { k::gaussian_blur_plane(img.data.data(), o2.data(), 512, 512, 2.0); }, reps);
    report("gaussian_blur_plane", ts2, tp2, max_diff(o1, o2));
  }

  {
    const Tensor f = random_tensor(16, 32, 64, 64);
    std::vector<double> m1, s1, m2, s2;
    const double ts = time_ms([&] { k::serial::channel_moments(f, m1, s1); }, reps);
    const double tp = time_ms([&] { k::channel_moments(f, m2, s2); }, reps);
    report("channel_moments", ts, tp, std::max(max_diff(m1, m2), max_diff(s1, s2)));
  }

  return 0;
}
