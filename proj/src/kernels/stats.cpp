#include <cmath>
#include <stdexcept>

#include "bsm/kernels.hpp"

namespace bsm::kernels {

namespace {

// Two-pass population moments of one (n, c) plane.
void plane_moments(const Tensor& f, int n, int c, double& mean, double& stddev) {
  const double* p = f.chan(n, c);
  const std::size_t m = f.plane();
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += p[i];
  const double mu = s / static_cast<double>(m);
  double q = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = p[i] - mu;
    q += d * d;
  }
  mean = mu;
  stddev = std::sqrt(q / static_cast<double>(m));
}

}  // namespace

void channel_moments(const Tensor& f, std::vector<double>& mean,
                     std::vector<double>& stddev) {
  if (f.plane() == 0) throw std::invalid_argument("channel_moments: empty plane");
  mean.assign(static_cast<std::size_t>(f.n) * f.c, 0.0);
  stddev.assign(static_cast<std::size_t>(f.n) * f.c, 0.0);
  const int planes = f.n * f.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p)
    plane_moments(f, p / f.c, p % f.c, mean[p], stddev[p]);
}

namespace serial {

void channel_moments(const Tensor& f, std::vector<double>& mean,
                     std::vector<double>& stddev) {
  if (f.plane() == 0) throw std::invalid_argument("channel_moments: empty plane");
  mean.assign(static_cast<std::size_t>(f.n) * f.c, 0.0);
  stddev.assign(static_cast<std::size_t>(f.n) * f.c, 0.0);
  for (int n = 0; n < f.n; ++n)
    for (int c = 0; c < f.c; ++c)
      plane_moments(f, n, c, mean[static_cast<std::size_t>(n) * f.c + c],
                    stddev[static_cast<std::size_t>(n) * f.c + c]);
}

}  // namespace serial

}  // namespace bsm::kernels
