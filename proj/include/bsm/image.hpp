#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsm/tensor.hpp"

namespace bsm {

// H x W boolean raster stored as bytes (0/1). Used for building masks and
// for validity flags (false marks padding pixels that must stay out of the
// loss and the confusion counts).
struct BoolGrid {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  BoolGrid() = default;
  BoolGrid(int h_, int w_, bool fill = false)
      : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill ? 1 : 0) {}

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

  bool any() const {
    for (auto b : v)
      if (b) return true;
    return false;
  }
  std::size_t count() const {
    std::size_t k = 0;
    for (auto b : v) k += b ? 1 : 0;
    return k;
  }

  friend bool operator==(const BoolGrid&, const BoolGrid&) = default;
};

// Interleaved H x W x C byte image, C = 3 for the datasets handled here.
struct ImageU8 {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> v;

  ImageU8() = default;
  ImageU8(int h_, int w_, int c_, std::uint8_t fill = 0)
      : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::uint8_t& at(int y, int x, int ch) {
    return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

// One image patch with its aligned building mask.
struct Tile {
  std::string id;        // "city + number" rule, e.g. styleA_0004
  ImageU8 image;
  BoolGrid mask;         // true = building
  BoolGrid valid;        // false = padding introduced by tiling/augmentation
  std::string city;
  double resolution_m = 0.3;
};

// N x H x W boolean batch (masks or validity flags).
struct BoolBatch {
  int n = 0, h = 0, w = 0;
  std::vector<std::uint8_t> v;

  BoolBatch() = default;
  BoolBatch(int n_, int h_, int w_, bool fill = false)
      : n(n_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * h_ * w_, fill ? 1 : 0) {}

  std::uint8_t& at(int i, int y, int x) {
    return v[(static_cast<std::size_t>(i) * h + y) * w + x];
  }
  std::uint8_t at(int i, int y, int x) const {
    return v[(static_cast<std::size_t>(i) * h + y) * w + x];
  }

  std::uint8_t* sample(int i) { return v.data() + static_cast<std::size_t>(i) * h * w; }
  const std::uint8_t* sample(int i) const {
    return v.data() + static_cast<std::size_t>(i) * h * w;
  }

  friend bool operator==(const BoolBatch&, const BoolBatch&) = default;
};

// N aligned image/mask pairs. Intensities live in [0, 255] as doubles; labels
// and validity ride along so every stage transforms them consistently.
struct SampleBatch {
  Tensor images;    // N x 3 x H x W
  BoolBatch masks;  // N x H x W
  BoolBatch valid;  // N x H x W

  int size() const { return images.n; }
};

SampleBatch make_batch(const std::vector<Tile>& tiles, const std::vector<int>& indices);
std::vector<Tile> batch_to_tiles(const SampleBatch& batch);

}  // namespace bsm
