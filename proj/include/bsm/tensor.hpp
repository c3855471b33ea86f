#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bsm {

// Dense N x C x H x W array, row-major, double precision throughout the
// pipeline so that finite-difference checks run at full accuracy.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw std::invalid_argument("Tensor: negative dimension");
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.n, t.c, t.h, t.w); }

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  double* chan(int i, int j) {
    return data.data() + (static_cast<std::size_t>(i) * c + j) * plane();
  }
  const double* chan(int i, int j) const {
    return data.data() + (static_cast<std::size_t>(i) * c + j) * plane();
  }

  double& at(int i, int j, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }
  double at(int i, int j, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;
};

// y += x, shapes must match. Used when a tensor feeds several consumers and
// their gradients have to accumulate.
inline void axpy(Tensor& y, const Tensor& x) {
  if (!y.same_shape(x)) throw std::invalid_argument("axpy: shape mismatch");
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
}

}  // namespace bsm
