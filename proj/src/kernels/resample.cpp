#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsm/kernels.hpp"

namespace bsm {

Affine Affine::inverse() const {
  const double det = a * d - b * c;
  if (det == 0.0) throw std::invalid_argument("Affine: singular matrix");
  Affine r;
  r.a = d / det;
  r.b = -b / det;
  r.c = -c / det;
  r.d = a / det;
  r.tx = -(r.a * tx + r.b * ty);
  r.ty = -(r.c * tx + r.d * ty);
  return r;
}

Affine Affine::compose(const Affine& f, const Affine& g) {
  Affine r;
  r.a = f.a * g.a + f.b * g.c;
  r.b = f.a * g.b + f.b * g.d;
  r.c = f.c * g.a + f.d * g.c;
  r.d = f.c * g.b + f.d * g.d;
  r.tx = f.a * g.tx + f.b * g.ty + f.tx;
  r.ty = f.c * g.tx + f.d * g.ty + f.ty;
  return r;
}

namespace kernels {

namespace {

void pool_plane(Tensor& out, std::vector<std::int64_t>& argmax, const Tensor& in,
                int n, int c) {
  const double* ip = in.chan(n, c);
  double* op = out.chan(n, c);
  const std::size_t in_base = (static_cast<std::size_t>(n) * in.c + c) * in.plane();
  const std::size_t out_base = (static_cast<std::size_t>(n) * out.c + c) * out.plane();
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      const int iy = 2 * y, ix = 2 * x;
      std::size_t best = static_cast<std::size_t>(iy) * in.w + ix;
      double bv = ip[best];
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const std::size_t idx = static_cast<std::size_t>(iy + dy) * in.w + (ix + dx);
          if (ip[idx] > bv) {
            bv = ip[idx];
            best = idx;
          }
        }
      }
      op[static_cast<std::size_t>(y) * out.w + x] = bv;
      argmax[out_base + static_cast<std::size_t>(y) * out.w + x] =
          static_cast<std::int64_t>(in_base + best);
    }
  }
}

void unpool_plane(Tensor& din, const Tensor& dout,
                  const std::vector<std::int64_t>& argmax, int n, int c) {
  double* dp = din.chan(n, c);
  const std::size_t in_base = (static_cast<std::size_t>(n) * din.c + c) * din.plane();
  for (std::size_t i = 0; i < din.plane(); ++i) dp[i] = 0.0;
  const double* gp = dout.chan(n, c);
  const std::size_t out_base = (static_cast<std::size_t>(n) * dout.c + c) * dout.plane();
  for (std::size_t i = 0; i < dout.plane(); ++i)
    din.data[argmax[out_base + i]] += gp[i];
  (void)in_base;
}

// Bilinear taps with half-pixel centers, clamped to the frame.
struct Taps {
  int lo;
  double w_hi;  // weight of lo+1; weight of lo is 1 - w_hi
};

Taps taps_for(int dst, int dst_n, int src_n) {
  const double scale = static_cast<double>(src_n) / dst_n;
  double s = (dst + 0.5) * scale - 0.5;
  if (s < 0) s = 0;
  if (s > src_n - 1) s = src_n - 1;
  int lo = static_cast<int>(std::floor(s));
  if (lo > src_n - 2) lo = std::max(0, src_n - 2);
  return {lo, s - lo};
}

void resize_plane_forward(Tensor& out, const Tensor& in, int n, int c) {
  const double* ip = in.chan(n, c);
  double* op = out.chan(n, c);
  for (int y = 0; y < out.h; ++y) {
    const Taps ty = taps_for(y, out.h, in.h);
    const double* r0 = ip + static_cast<std::size_t>(ty.lo) * in.w;
    const double* r1 = in.h > 1 ? r0 + in.w : r0;
    for (int x = 0; x < out.w; ++x) {
      const Taps tx = taps_for(x, out.w, in.w);
      const int x1 = in.w > 1 ? tx.lo + 1 : tx.lo;
      const double top = r0[tx.lo] * (1 - tx.w_hi) + r0[x1] * tx.w_hi;
      const double bot = r1[tx.lo] * (1 - tx.w_hi) + r1[x1] * tx.w_hi;
      op[static_cast<std::size_t>(y) * out.w + x] = top * (1 - ty.w_hi) + bot * ty.w_hi;
    }
  }
}

void resize_plane_backward(Tensor& din, const Tensor& dout, int n, int c) {
  double* dp = din.chan(n, c);
  for (std::size_t i = 0; i < din.plane(); ++i) dp[i] = 0.0;
  const double* gp = dout.chan(n, c);
  for (int y = 0; y < dout.h; ++y) {
    const Taps ty = taps_for(y, dout.h, din.h);
    const int y1 = din.h > 1 ? ty.lo + 1 : ty.lo;
    for (int x = 0; x < dout.w; ++x) {
      const Taps tx = taps_for(x, dout.w, din.w);
      const int x1 = din.w > 1 ? tx.lo + 1 : tx.lo;
      const double g = gp[static_cast<std::size_t>(y) * dout.w + x];
      dp[static_cast<std::size_t>(ty.lo) * din.w + tx.lo] +=
          g * (1 - ty.w_hi) * (1 - tx.w_hi);
      dp[static_cast<std::size_t>(ty.lo) * din.w + x1] += g * (1 - ty.w_hi) * tx.w_hi;
      dp[static_cast<std::size_t>(y1) * din.w + tx.lo] += g * ty.w_hi * (1 - tx.w_hi);
      dp[static_cast<std::size_t>(y1) * din.w + x1] += g * ty.w_hi * tx.w_hi;
    }
  }
}

void warp_row_bilinear(const double* src, int sh, int sw, double* dst, int dw,
                       int y, const Affine& inv, double fill) {
  double* drow = dst + static_cast<std::size_t>(y) * dw;
  for (int x = 0; x < dw; ++x) {
    double sx, sy;
    inv.apply(x, y, sx, sy);
    if (sx < 0 || sy < 0 || sx > sw - 1 || sy > sh - 1) {
      drow[x] = fill;
      continue;
    }
    const int x0 = std::min(static_cast<int>(std::floor(sx)), sw - 1);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), sh - 1);
    const int x1 = std::min(x0 + 1, sw - 1);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double fx = sx - x0, fy = sy - y0;
    const double* r0 = src + static_cast<std::size_t>(y0) * sw;
    const double* r1 = src + static_cast<std::size_t>(y1) * sw;
    const double top = r0[x0] * (1 - fx) + r0[x1] * fx;
    const double bot = r1[x0] * (1 - fx) + r1[x1] * fx;
    drow[x] = top * (1 - fy) + bot * fy;
  }
}

void warp_row_nearest(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst,
                      int dw, int y, const Affine& inv, std::uint8_t fill) {
  std::uint8_t* drow = dst + static_cast<std::size_t>(y) * dw;
  for (int x = 0; x < dw; ++x) {
    double sx, sy;
    inv.apply(x, y, sx, sy);
    const long rx = std::lround(sx);
    const long ry = std::lround(sy);
    drow[x] = (rx < 0 || ry < 0 || rx >= sw || ry >= sh)
                  ? fill
                  : src[static_cast<std::size_t>(ry) * sw + rx];
  }
}

std::vector<double> gauss_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    s += k[i + r];
  }
  for (double& v : k) v /= s;
  return k;
}

inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void blur_pass_rows(const double* src, double* dst, int h, int w,
                    const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  for (int y = 0; y < h; ++y) {
    const double* srow = src + static_cast<std::size_t>(y) * w;
    double* drow = dst + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * srow[reflect(x + i, w)];
      drow[x] = s;
    }
  }
}

void blur_pass_cols(const double* src, double* dst, int h, int w,
                    const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  for (int y = 0; y < h; ++y) {
    double* drow = dst + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i)
        s += k[i + r] * src[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
      drow[x] = s;
    }
  }
}

}  // namespace

void maxpool2_forward(Tensor& out, std::vector<std::int64_t>& argmax, const Tensor& in) {
  if (in.h % 2 || in.w % 2) throw std::invalid_argument("maxpool2: odd input size");
  if (out.n != in.n || out.c != in.c || out.h != in.h / 2 || out.w != in.w / 2)
    throw std::invalid_argument("maxpool2: output shape mismatch");
  argmax.assign(out.size(), 0);
  const int planes = out.n * out.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) pool_plane(out, argmax, in, p / out.c, p % out.c);
}

void maxpool2_backward(Tensor& din, const Tensor& dout,
                       const std::vector<std::int64_t>& argmax) {
  const int planes = din.n * din.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) unpool_plane(din, dout, argmax, p / din.c, p % din.c);
}

void resize_bilinear_forward(Tensor& out, const Tensor& in) {
  if (out.n != in.n || out.c != in.c)
    throw std::invalid_argument("resize: batch/channel mismatch");
  const int planes = out.n * out.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) resize_plane_forward(out, in, p / out.c, p % out.c);
}

void resize_bilinear_backward(Tensor& din, const Tensor& dout) {
  if (din.n != dout.n || din.c != dout.c)
    throw std::invalid_argument("resize: batch/channel mismatch");
  const int planes = din.n * din.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) resize_plane_backward(din, dout, p / din.c, p % din.c);
}

void warp_plane_bilinear(const double* src, int sh, int sw, double* dst, int dh,
                         int dw, const Affine& inv, double fill) {
  #pragma omp parallel for schedule(static)
  for (int y = 0; y < dh; ++y) warp_row_bilinear(src, sh, sw, dst, dw, y, inv, fill);
}

void warp_plane_nearest(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst,
                        int dh, int dw, const Affine& inv, std::uint8_t fill) {
  #pragma omp parallel for schedule(static)
  for (int y = 0; y < dh; ++y) warp_row_nearest(src, sh, sw, dst, dw, y, inv, fill);
}

void gaussian_blur_plane(const double* src, double* dst, int h, int w, double sigma) {
  if (sigma <= 0) throw std::invalid_argument("gaussian_blur: sigma <= 0");
  const std::vector<double> k = gauss_kernel(sigma);
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  #pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const double* srow = src + static_cast<std::size_t>(y) * w;
    double* drow = tmp.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * srow[reflect(x + i, w)];
      drow[x] = s;
    }
  }
  #pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    double* drow = dst + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i)
        s += k[i + r] * tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
      drow[x] = s;
    }
  }
}

namespace serial {

void maxpool2_forward(Tensor& out, std::vector<std::int64_t>& argmax, const Tensor& in) {
  if (in.h % 2 || in.w % 2) throw std::invalid_argument("maxpool2: odd input size");
  if (out.n != in.n || out.c != in.c || out.h != in.h / 2 || out.w != in.w / 2)
    throw std::invalid_argument("maxpool2: output shape mismatch");
  argmax.assign(out.size(), 0);
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c) pool_plane(out, argmax, in, n, c);
}

void maxpool2_backward(Tensor& din, const Tensor& dout,
                       const std::vector<std::int64_t>& argmax) {
  for (int n = 0; n < din.n; ++n)
    for (int c = 0; c < din.c; ++c) unpool_plane(din, dout, argmax, n, c);
}

void resize_bilinear_forward(Tensor& out, const Tensor& in) {
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c) resize_plane_forward(out, in, n, c);
}

void resize_bilinear_backward(Tensor& din, const Tensor& dout) {
  for (int n = 0; n < din.n; ++n)
    for (int c = 0; c < din.c; ++c) resize_plane_backward(din, dout, n, c);
}

void warp_plane_bilinear(const double* src, int sh, int sw, double* dst, int dh,
                         int dw, const Affine& inv, double fill) {
  for (int y = 0; y < dh; ++y) warp_row_bilinear(src, sh, sw, dst, dw, y, inv, fill);
}

void warp_plane_nearest(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst,
                        int dh, int dw, const Affine& inv, std::uint8_t fill) {
  for (int y = 0; y < dh; ++y) warp_row_nearest(src, sh, sw, dst, dw, y, inv, fill);
}

void gaussian_blur_plane(const double* src, double* dst, int h, int w, double sigma) {
  if (sigma <= 0) throw std::invalid_argument("gaussian_blur: sigma <= 0");
  const std::vector<double> k = gauss_kernel(sigma);
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  blur_pass_rows(src, tmp.data(), h, w, k);
  blur_pass_cols(tmp.data(), dst, h, w, k);
}

}  // namespace serial

}  // namespace kernels
}  // namespace bsm
