#include "bsm/kernels.hpp"

#include <stdexcept>

namespace bsm::kernels {

namespace {

void check_conv_shapes(const Tensor& out, const Tensor& in, const Tensor& weight,
                       int pad) {
  if (weight.h != weight.w) throw std::invalid_argument("conv2d: kernel not square");
  if (weight.c != in.c) throw std::invalid_argument("conv2d: Cin mismatch");
  if (out.c != weight.n) throw std::invalid_argument("conv2d: Cout mismatch");
  if (out.n != in.n) throw std::invalid_argument("conv2d: batch mismatch");
  const int k = weight.h;
  if (out.h != in.h - k + 1 + 2 * pad || out.w != in.w - k + 1 + 2 * pad)
    throw std::invalid_argument("conv2d: output size mismatch");
}

// Accumulates one (n, co) output plane. The contribution order is fixed to
// ascending (ci, ky, kx) so the serial and parallel paths sum in the same
// order and agree bitwise.
void conv_plane_forward(Tensor& out, const Tensor& in, const Tensor& weight,
                        const Tensor& bias, int pad, int n, int co) {
  const int k = weight.h;
  double* op = out.chan(n, co);
  const double b = bias.data[co];
  const std::size_t plane = out.plane();
  for (std::size_t i = 0; i < plane; ++i) op[i] = b;
  for (int ci = 0; ci < in.c; ++ci) {
    const double* ip = in.chan(n, ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double wv = weight.at(co, ci, ky, kx);
        for (int y = 0; y < out.h; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= in.h) continue;
          const int x0 = std::max(0, pad - kx);
          const int x1 = std::min(out.w, in.w + pad - kx);
          double* orow = op + static_cast<std::size_t>(y) * out.w;
          const double* irow = ip + static_cast<std::size_t>(iy) * in.w + (x0 + kx - pad);
          #pragma omp simd
          for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x - x0];
        }
      }
    }
  }
}

// Row-sweep gradient gather for one (n, ci) input plane. Contribution order
// per element is ascending (co, ky, kx), matching the serial reference.
void conv_plane_backward_input(Tensor& din, const Tensor& dout, const Tensor& weight,
                               int pad, int n, int ci) {
  const int k = weight.h;
  double* dp = din.chan(n, ci);
  const std::size_t plane = din.plane();
  for (std::size_t i = 0; i < plane; ++i) dp[i] = 0.0;
  for (int co = 0; co < dout.c; ++co) {
    const double* gp = dout.chan(n, co);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double wv = weight.at(co, ci, ky, kx);
        for (int iy = 0; iy < din.h; ++iy) {
          const int oy = iy - ky + pad;
          if (oy < 0 || oy >= dout.h) continue;
          const int x0 = std::max(0, kx - pad);
          const int x1 = std::min(din.w, dout.w + kx - pad);
          double* drow = dp + static_cast<std::size_t>(iy) * din.w;
          const double* grow =
              gp + static_cast<std::size_t>(oy) * dout.w + (x0 - kx + pad);
          #pragma omp simd
          for (int ix = x0; ix < x1; ++ix) drow[ix] += wv * grow[ix - x0];
        }
      }
    }
  }
}

void conv_filter_backward_params(Tensor& dweight, Tensor& dbias, const Tensor& in,
                                 const Tensor& dout, int pad, int co) {
  const int k = dweight.h;
  for (int ci = 0; ci < in.c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double s = 0.0;
        for (int n = 0; n < in.n; ++n) {
          const double* gp = dout.chan(n, co);
          const double* ip = in.chan(n, ci);
          for (int y = 0; y < dout.h; ++y) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            const int x0 = std::max(0, pad - kx);
            const int x1 = std::min(dout.w, in.w + pad - kx);
            const double* grow = gp + static_cast<std::size_t>(y) * dout.w;
            const double* irow =
                ip + static_cast<std::size_t>(iy) * in.w + (x0 + kx - pad);
            for (int x = x0; x < x1; ++x) s += grow[x] * irow[x - x0];
          }
        }
        dweight.at(co, ci, ky, kx) = s;
      }
    }
  }
  double sb = 0.0;
  for (int n = 0; n < in.n; ++n) {
    const double* gp = dout.chan(n, co);
    const std::size_t plane = dout.plane();
    for (std::size_t i = 0; i < plane; ++i) sb += gp[i];
  }
  dbias.data[co] = sb;
}

}  // namespace

void conv2d_forward(Tensor& out, const Tensor& in, const Tensor& weight,
                    const Tensor& bias, int pad) {
  check_conv_shapes(out, in, weight, pad);
  const int planes = out.n * out.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p)
    conv_plane_forward(out, in, weight, bias, pad, p / out.c, p % out.c);
}

void conv2d_backward_input(Tensor& din, const Tensor& dout, const Tensor& weight,
                           int pad) {
  check_conv_shapes(dout, din, weight, pad);
  const int planes = din.n * din.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p)
    conv_plane_backward_input(din, dout, weight, pad, p / din.c, p % din.c);
}

void conv2d_backward_params(Tensor& dweight, Tensor& dbias, const Tensor& in,
                            const Tensor& dout, int pad) {
  check_conv_shapes(dout, in, dweight, pad);
  #pragma omp parallel for schedule(static)
  for (int co = 0; co < dweight.n; ++co)
    conv_filter_backward_params(dweight, dbias, in, dout, pad, co);
}

namespace serial {

void conv2d_forward(Tensor& out, const Tensor& in, const Tensor& weight,
                    const Tensor& bias, int pad) {
  check_conv_shapes(out, in, weight, pad);
  const int k = weight.h;
  for (int n = 0; n < out.n; ++n) {
    for (int co = 0; co < out.c; ++co) {
      for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
          double s = bias.data[co];
          for (int ci = 0; ci < in.c; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= in.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = x + kx - pad;
                if (ix < 0 || ix >= in.w) continue;
                s += in.at(n, ci, iy, ix) * weight.at(co, ci, ky, kx);
              }
            }
          }
          out.at(n, co, y, x) = s;
        }
      }
    }
  }
}

void conv2d_backward_input(Tensor& din, const Tensor& dout, const Tensor& weight,
                           int pad) {
  check_conv_shapes(dout, din, weight, pad);
  const int k = weight.h;
  for (int n = 0; n < din.n; ++n) {
    for (int ci = 0; ci < din.c; ++ci) {
      for (int iy = 0; iy < din.h; ++iy) {
        for (int ix = 0; ix < din.w; ++ix) {
          double s = 0.0;
          for (int co = 0; co < dout.c; ++co) {
            for (int ky = 0; ky < k; ++ky) {
              const int oy = iy - ky + pad;
              if (oy < 0 || oy >= dout.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ox = ix - kx + pad;
                if (ox < 0 || ox >= dout.w) continue;
                s += dout.at(n, co, oy, ox) * weight.at(co, ci, ky, kx);
              }
            }
          }
          din.at(n, ci, iy, ix) = s;
        }
      }
    }
  }
}

void conv2d_backward_params(Tensor& dweight, Tensor& dbias, const Tensor& in,
                            const Tensor& dout, int pad) {
  check_conv_shapes(dout, in, dweight, pad);
  const int k = dweight.h;
  for (int co = 0; co < dweight.n; ++co) {
    for (int ci = 0; ci < in.c; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double s = 0.0;
          for (int n = 0; n < in.n; ++n) {
            for (int y = 0; y < dout.h; ++y) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= in.h) continue;
              for (int x = 0; x < dout.w; ++x) {
                const int ix = x + kx - pad;
                if (ix < 0 || ix >= in.w) continue;
                s += dout.at(n, co, y, x) * in.at(n, ci, iy, ix);
              }
            }
          }
          dweight.at(co, ci, ky, kx) = s;
        }
      }
    }
    double sb = 0.0;
    for (int n = 0; n < in.n; ++n) {
      const double* gp = dout.chan(n, co);
      for (std::size_t i = 0; i < dout.plane(); ++i) sb += gp[i];
    }
    dbias.data[co] = sb;
  }
}

}  // namespace serial

}  // namespace bsm::kernels
