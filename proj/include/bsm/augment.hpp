#pragma once

#include <array>
#include <utility>
#include <vector>

#include "bsm/image.hpp"
#include "bsm/kernels.hpp"
#include "bsm/rng.hpp"

namespace bsm {

struct AugmentationConfig {
  // Probability that each listed op fires inside an active submodule.
  double per_op_probability = 0.5;
  double rotation_bound_deg = 30.0;
  std::array<double, 2> scale_range{0.5, 2.0};
  std::array<double, 2> brightness_range{0.5, 1.5};
  std::array<double, 2> color_balance_range{0.5, 1.5};
  std::array<double, 2> contrast_range{0.5, 1.5};
  std::array<double, 2> sharpness_range{0.5, 1.5};
  std::array<double, 2> blur_sigma_range{0.1, 2.0};

  void validate() const;
  friend bool operator==(const AugmentationConfig&, const AugmentationConfig&) = default;
};

// Drawn geometric transform for one sample. All four ops fuse into a single
// affine about the image center, so image and mask see exactly the same map
// and only one resampling pass happens.
struct GeoParams {
  bool hflip = false;
  bool vflip = false;
  double rotation_deg = 0.0;
  double scale = 1.0;

  bool is_identity() const {
    return !hflip && !vflip && rotation_deg == 0.0 && scale == 1.0;
  }
  friend bool operator==(const GeoParams&, const GeoParams&) = default;
};

struct ColorParams {
  double brightness = 1.0;
  double color_balance = 1.0;
  double contrast = 1.0;
  double sharpness = 1.0;
  bool blur = false;
  double blur_sigma = 0.0;

  friend bool operator==(const ColorParams&, const ColorParams&) = default;
};

// Forward pixel map (source -> destination) of the drawn transform, with the
// rotation/scale center at the pixel-center midpoint ((w-1)/2, (h-1)/2) so
// that flips land exactly on the integer grid.
Affine geo_affine(const GeoParams& p, int h, int w);

std::vector<GeoParams> draw_geo_params(int n, const AugmentationConfig& cfg, Rng& rng);
std::vector<ColorParams> draw_color_params(int n, const AugmentationConfig& cfg,
                                           Rng& rng);

// Images resample bilinearly, masks and validity nearest-neighbor; pixels
// mapped from outside the frame become 0 / false / invalid.
SampleBatch apply_geometric(const SampleBatch& batch, const AugmentationConfig& cfg,
                            Rng& rng, std::vector<GeoParams>* drawn = nullptr);
SampleBatch apply_geometric_with_params(const SampleBatch& batch,
                                        const std::vector<GeoParams>& params);

// Photometric ops touch images only; masks and validity are returned
// bit-identical to the input.
SampleBatch apply_color(const SampleBatch& batch, const AugmentationConfig& cfg,
                        Rng& rng, std::vector<ColorParams>* drawn = nullptr);
SampleBatch apply_color_with_params(const SampleBatch& batch,
                                    const std::vector<ColorParams>& params);

// Resizes by s about the center, then crops (s > 1) or zero/false pads
// (s < 1) back to the original frame. s outside allowed_range is rejected.
std::pair<ImageU8, BoolGrid> scale_then_fit(
    const ImageU8& image, const BoolGrid& mask, double s,
    const std::array<double, 2>& allowed_range = {0.5, 2.0});

}  // namespace bsm
