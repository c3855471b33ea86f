#pragma once

#include <cstdint>
#include <vector>

#include "bsm/tensor.hpp"

// Compute kernels behind the model and the augmentation pipeline. Each kernel
// has two implementations with identical semantics: the OpenMP one used in
// production (namespace kernels) and a plain serial reference (namespace
// kernels::serial) kept for the unit tests and the bench tool. Every output
// element is written by exactly one thread and the inner summation order is
// fixed, so the parallel results are bit-identical to the serial ones for
// any thread count.

namespace bsm {

// 2D affine map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty).
struct Affine {
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

  void apply(double x, double y, double& ox, double& oy) const {
    ox = a * x + b * y + tx;
    oy = c * x + d * y + ty;
  }
  Affine inverse() const;
  static Affine compose(const Affine& f, const Affine& g);  // f after g
};

namespace kernels {

// Convolution, stride 1, square kernel, zero padding `pad`.
// weight: Cout x Cin x K x K, bias: 1 x Cout x 1 x 1.
void conv2d_forward(Tensor& out, const Tensor& in, const Tensor& weight,
                    const Tensor& bias, int pad);
void conv2d_backward_input(Tensor& din, const Tensor& dout, const Tensor& weight,
                           int pad);
void conv2d_backward_params(Tensor& dweight, Tensor& dbias, const Tensor& in,
                            const Tensor& dout, int pad);

// 2x2 max pooling, stride 2. argmax stores the flat input index feeding each
// output element so the backward pass can route gradients.
void maxpool2_forward(Tensor& out, std::vector<std::int64_t>& argmax, const Tensor& in);
void maxpool2_backward(Tensor& din, const Tensor& dout,
                       const std::vector<std::int64_t>& argmax);

// Bilinear resize to the preallocated output size (half-pixel centers).
void resize_bilinear_forward(Tensor& out, const Tensor& in);
void resize_bilinear_backward(Tensor& din, const Tensor& dout);

// Single-plane affine warp: for every destination pixel, `inv` maps it back
// to source coordinates; out-of-frame samples read `fill`.
void warp_plane_bilinear(const double* src, int sh, int sw, double* dst, int dh,
                         int dw, const Affine& inv, double fill);
void warp_plane_nearest(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst,
                        int dh, int dw, const Affine& inv, std::uint8_t fill);

// Separable Gaussian blur with reflected (mirror) borders; preserves
// constants exactly up to rounding because the kernel is normalized.
void gaussian_blur_plane(const double* src, double* dst, int h, int w, double sigma);

// Per-sample per-channel population moments over the spatial extent.
void channel_moments(const Tensor& f, std::vector<double>& mean,
                     std::vector<double>& stddev);

namespace serial {
void conv2d_forward(Tensor& out, const Tensor& in, const Tensor& weight,
                    const Tensor& bias, int pad);
void conv2d_backward_input(Tensor& din, const Tensor& dout, const Tensor& weight,
                           int pad);
void conv2d_backward_params(Tensor& dweight, Tensor& dbias, const Tensor& in,
                            const Tensor& dout, int pad);
void maxpool2_forward(Tensor& out, std::vector<std::int64_t>& argmax, const Tensor& in);
void maxpool2_backward(Tensor& din, const Tensor& dout,
                       const std::vector<std::int64_t>& argmax);
void resize_bilinear_forward(Tensor& out, const Tensor& in);
void resize_bilinear_backward(Tensor& din, const Tensor& dout);
void warp_plane_bilinear(const double* src, int sh, int sw, double* dst, int dh,
                         int dw, const Affine& inv, double fill);
void warp_plane_nearest(const std::uint8_t* src, int sh, int sw, std::uint8_t* dst,
                        int dh, int dw, const Affine& inv, std::uint8_t fill);
void gaussian_blur_plane(const double* src, double* dst, int h, int w, double sigma);
void channel_moments(const Tensor& f, std::vector<double>& mean,
                     std::vector<double>& stddev);
}  // namespace serial

}  // namespace kernels
}  // namespace bsm
