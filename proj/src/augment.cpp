#include "bsm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bsm {

namespace {

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument(std::string("augment config: ") + what +
                                " must be in [0, 1]");
}

void check_range(const std::array<double, 2>& r, const char* what, bool positive) {
  if (!(r[0] <= r[1]) || (positive && r[0] <= 0.0))
    throw std::invalid_argument(std::string("augment config: bad range for ") + what);
}

bool bernoulli(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

double uniform_in(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

void AugmentationConfig::validate() const {
  check_prob(per_op_probability, "per_op_probability");
  if (rotation_bound_deg < 0.0)
    throw std::invalid_argument("augment config: negative rotation bound");
  check_range(scale_range, "scale_range", true);
  check_range(brightness_range, "brightness_range", false);
  check_range(color_balance_range, "color_balance_range", false);
  check_range(contrast_range, "contrast_range", false);
  check_range(sharpness_range, "sharpness_range", false);
  check_range(blur_sigma_range, "blur_sigma_range", true);
}

Affine geo_affine(const GeoParams& p, int h, int w) {
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  Affine center_out{1, 0, 0, 1, -cx, -cy};
  Affine flips{p.hflip ? -1.0 : 1.0, 0, 0, p.vflip ? -1.0 : 1.0, 0, 0};
  const double rad = p.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  Affine rot{cs, -sn, sn, cs, 0, 0};
  Affine scale{p.scale, 0, 0, p.scale, 0, 0};
  Affine center_in{1, 0, 0, 1, cx, cy};
  // flips, then rotation, then scale, about the center
  Affine f = Affine::compose(flips, center_out);
  f = Affine::compose(rot, f);
  f = Affine::compose(scale, f);
  return Affine::compose(center_in, f);
}

std::vector<GeoParams> draw_geo_params(int n, const AugmentationConfig& cfg, Rng& rng) {
  std::vector<GeoParams> out(static_cast<std::size_t>(std::max(n, 0)));
  for (auto& p : out) {
    p.hflip = bernoulli(rng, cfg.per_op_probability);
    p.vflip = bernoulli(rng, cfg.per_op_probability);
    if (bernoulli(rng, cfg.per_op_probability))
      p.rotation_deg = uniform_in(rng, -cfg.rotation_bound_deg, cfg.rotation_bound_deg);
    if (bernoulli(rng, cfg.per_op_probability))
      p.scale = uniform_in(rng, cfg.scale_range[0], cfg.scale_range[1]);
  }
  return out;
}

std::vector<ColorParams> draw_color_params(int n, const AugmentationConfig& cfg,
                                           Rng& rng) {
  std::vector<ColorParams> out(static_cast<std::size_t>(std::max(n, 0)));
  for (auto& p : out) {
    if (bernoulli(rng, cfg.per_op_probability))
      p.brightness = uniform_in(rng, cfg.brightness_range[0], cfg.brightness_range[1]);
    if (bernoulli(rng, cfg.per_op_probability))
      p.color_balance =
          uniform_in(rng, cfg.color_balance_range[0], cfg.color_balance_range[1]);
    if (bernoulli(rng, cfg.per_op_probability))
      p.contrast = uniform_in(rng, cfg.contrast_range[0], cfg.contrast_range[1]);
    if (bernoulli(rng, cfg.per_op_probability))
      p.sharpness = uniform_in(rng, cfg.sharpness_range[0], cfg.sharpness_range[1]);
    if (bernoulli(rng, cfg.per_op_probability)) {
      p.blur = true;
      p.blur_sigma = uniform_in(rng, cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
    }
  }
  return out;
}

SampleBatch apply_geometric_with_params(const SampleBatch& batch,
                                        const std::vector<GeoParams>& params) {
  if (static_cast<int>(params.size()) != batch.size())
    throw std::invalid_argument("apply_geometric: one GeoParams per sample required");
  SampleBatch out = batch;
  const int h = batch.images.h, w = batch.images.w;
  for (int i = 0; i < batch.size(); ++i) {
    const GeoParams& p = params[i];
    if (p.is_identity()) continue;
    const Affine inv = geo_affine(p, h, w).inverse();
    for (int ch = 0; ch < batch.images.c; ++ch)
      kernels::warp_plane_bilinear(batch.images.chan(i, ch), h, w,
                                   out.images.chan(i, ch), h, w, inv, 0.0);
    kernels::warp_plane_nearest(batch.masks.sample(i), h, w, out.masks.sample(i), h,
                                w, inv, 0);
    kernels::warp_plane_nearest(batch.valid.sample(i), h, w, out.valid.sample(i), h,
                                w, inv, 0);
  }
  return out;
}

SampleBatch apply_geometric(const SampleBatch& batch, const AugmentationConfig& cfg,
                            Rng& rng, std::vector<GeoParams>* drawn) {
  cfg.validate();
  std::vector<GeoParams> params = draw_geo_params(batch.size(), cfg, rng);
  if (drawn) *drawn = params;
  if (batch.size() == 0) return batch;
  return apply_geometric_with_params(batch, params);
}

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

// out = x + (f - 1) * (x - base); exact identity at f = 1.
inline double blend(double x, double base, double f) {
  return std::clamp(x + (f - 1.0) * (x - base), 0.0, 255.0);
}

void color_one_sample(Tensor& images, const BoolBatch& valid, int i,
                      const ColorParams& p) {
  const int h = images.h, w = images.w, c = images.c;
  const std::size_t plane = images.plane();

  if (p.brightness != 1.0) {
    for (int ch = 0; ch < c; ++ch) {
      double* ip = images.chan(i, ch);
      for (std::size_t k = 0; k < plane; ++k)
        ip[k] = std::clamp(ip[k] * p.brightness, 0.0, 255.0);
    }
  }

  if (p.color_balance != 1.0 && c == 3) {
    double* r = images.chan(i, 0);
    double* g = images.chan(i, 1);
    double* b = images.chan(i, 2);
    for (std::size_t k = 0; k < plane; ++k) {
      const double gray = kLumaR * r[k] + kLumaG * g[k] + kLumaB * b[k];
      r[k] = blend(r[k], gray, p.color_balance);
      g[k] = blend(g[k], gray, p.color_balance);
      b[k] = blend(b[k], gray, p.color_balance);
    }
  }

  if (p.contrast != 1.0) {
    // Pivot on the mean luma over real (non-padding) pixels.
    double sum = 0.0;
    std::size_t count = 0;
    const std::uint8_t* vp = valid.sample(i);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!vp[static_cast<std::size_t>(y) * w + x]) continue;
        double gray = 0.0;
        if (c == 3)
          gray = kLumaR * images.at(i, 0, y, x) + kLumaG * images.at(i, 1, y, x) +
                 kLumaB * images.at(i, 2, y, x);
        else
          gray = images.at(i, 0, y, x);
        sum += gray;
        ++count;
      }
    }
    const double mean = count ? sum / static_cast<double>(count) : 0.0;
    for (int ch = 0; ch < c; ++ch) {
      double* ip = images.chan(i, ch);
      for (std::size_t k = 0; k < plane; ++k) ip[k] = blend(ip[k], mean, p.contrast);
    }
  }

  if (p.sharpness != 1.0) {
    // 3x3 smoothing kernel (center-weighted box, normalized), mirrored borders.
    static constexpr double kc = 5.0 / 13.0, ke = 1.0 / 13.0;
    std::vector<double> smooth(plane);
    for (int ch = 0; ch < c; ++ch) {
      double* ip = images.chan(i, ch);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double s = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              int yy = y + dy, xx = x + dx;
              if (yy < 0) yy = -yy;
              if (yy >= h) yy = 2 * h - 2 - yy;
              if (xx < 0) xx = -xx;
              if (xx >= w) xx = 2 * w - 2 - xx;
              const double wv = (dy == 0 && dx == 0) ? kc : ke;
              s += wv * ip[static_cast<std::size_t>(yy) * w + xx];
            }
          }
          smooth[static_cast<std::size_t>(y) * w + x] = s;
        }
      }
      for (std::size_t k = 0; k < plane; ++k) ip[k] = blend(ip[k], smooth[k], p.sharpness);
    }
  }

  if (p.blur) {
    std::vector<double> tmp(plane);
    for (int ch = 0; ch < c; ++ch) {
      double* ip = images.chan(i, ch);
      kernels::gaussian_blur_plane(ip, tmp.data(), h, w, p.blur_sigma);
      for (std::size_t k = 0; k < plane; ++k) ip[k] = std::clamp(tmp[k], 0.0, 255.0);
    }
  }
}

}  // namespace

SampleBatch apply_color_with_params(const SampleBatch& batch,
                                    const std::vector<ColorParams>& params) {
  if (static_cast<int>(params.size()) != batch.size())
    throw std::invalid_argument("apply_color: one ColorParams per sample required");
  SampleBatch out = batch;
  for (int i = 0; i < batch.size(); ++i) color_one_sample(out.images, out.valid, i, params[i]);
  return out;
}

SampleBatch apply_color(const SampleBatch& batch, const AugmentationConfig& cfg,
                        Rng& rng, std::vector<ColorParams>* drawn) {
  cfg.validate();
  std::vector<ColorParams> params = draw_color_params(batch.size(), cfg, rng);
  if (drawn) *drawn = params;
  if (batch.size() == 0) return batch;
  return apply_color_with_params(batch, params);
}

std::pair<ImageU8, BoolGrid> scale_then_fit(const ImageU8& image, const BoolGrid& mask,
                                            double s,
                                            const std::array<double, 2>& allowed_range) {
  if (s <= 0.0) throw std::invalid_argument("scale_then_fit: scale must be positive");
  if (s < allowed_range[0] || s > allowed_range[1])
    throw std::invalid_argument("scale_then_fit: scale " + std::to_string(s) +
                                " outside allowed range");
  if (image.h != mask.h || image.w != mask.w)
    throw std::invalid_argument("scale_then_fit: image/mask dimension mismatch");

  GeoParams p;
  p.scale = s;
  if (p.is_identity()) return {image, mask};
  const Affine inv = geo_affine(p, image.h, image.w).inverse();

  ImageU8 out_img(image.h, image.w, image.c);
  std::vector<double> src(static_cast<std::size_t>(image.h) * image.w);
  std::vector<double> dst(src.size());
  for (int ch = 0; ch < image.c; ++ch) {
    for (int y = 0; y < image.h; ++y)
      for (int x = 0; x < image.w; ++x)
        src[static_cast<std::size_t>(y) * image.w + x] = image.at(y, x, ch);
    kernels::warp_plane_bilinear(src.data(), image.h, image.w, dst.data(), image.h,
                                 image.w, inv, 0.0);
    for (int y = 0; y < image.h; ++y)
      for (int x = 0; x < image.w; ++x)
        out_img.at(y, x, ch) = static_cast<std::uint8_t>(
            std::lround(std::clamp(dst[static_cast<std::size_t>(y) * image.w + x], 0.0, 255.0)));
  }
  BoolGrid out_mask(mask.h, mask.w);
  kernels::warp_plane_nearest(mask.v.data(), mask.h, mask.w, out_mask.v.data(), mask.h,
                              mask.w, inv, 0);
  return {out_img, out_mask};
}

}  // namespace bsm
