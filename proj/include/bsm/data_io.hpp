#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsm/image.hpp"

namespace bsm {

// One record of the line-oriented dataset index:
// id <TAB> image_path <TAB> mask_path <TAB> city <TAB> split
struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string mask_path;
  std::string city;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;  // seed used for the train/val split
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& m);

// ids unique, splits well-formed; with a non-empty root also checks that the
// referenced files exist.
void validate_manifest(const DatasetManifest& m, const std::string& root);

// Mask rasters are strictly {0, 255}; any other value is an ingestion error
// rather than something to threshold away.
BoolGrid decode_mask(const ImageU8& raster);
ImageU8 encode_mask(const BoolGrid& mask);

Tile load_tile(const std::string& image_path, const std::string& mask_path);

// Non-overlapping tile grid; right/bottom remainders are zero/false padded
// and flagged invalid so they stay out of losses and confusion counts.
std::vector<Tile> crop_to_tiles(const ImageU8& image, const BoolGrid& mask,
                                int tile_size = 512, const std::string& city = "",
                                const std::string& id_prefix = "");

// Keeps exactly the tiles whose mask has at least one building pixel.
std::vector<Tile> filter_background_only(const std::vector<Tile>& tiles);
DatasetManifest filter_background_only(const DatasetManifest& m,
                                       const std::string& root);

// Relabels non-test entries as train/val. train count = explicit count when
// given, else round(ratio * N); membership is a seeded uniform draw.
void split_trainval(DatasetManifest& m, double ratio, std::uint64_t seed,
                    std::optional<long> explicit_train_count = std::nullopt);

// Rendering parameters of one synthetic style domain.
struct StyleParams {
  std::string name;
  std::array<double, 3> bias{0, 0, 0};
  std::array<double, 3> gain{1, 1, 1};
  double noise_sigma = 0.0;

  friend bool operator==(const StyleParams&, const StyleParams&) = default;
};

// Desk-scale stand-in for a two-style dataset: rectangles on a flat
// background, rendered under one of two global color styles.
struct SyntheticSpec {
  int tiles_per_style = 48;
  int tile_size = 64;
  int buildings_min = 2, buildings_max = 5;
  int building_size_min = 10, building_size_max = 24;
  StyleParams style_a{"styleA", {20, 0, -20}, {1.0, 1.0, 1.0}, 8.0};
  StyleParams style_b{"styleB", {70, 88, 110}, {0.62, 0.62, 0.62}, 8.0};
  std::uint64_t seed = 7;

  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// Renders the dataset under out_dir (images/, masks/, manifest.tsv). Style A
// tiles are labeled train, style B test; fully deterministic under the seed.
DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec,
                                           const std::string& out_dir);

// Loads every entry of the given split ("" = all). Workers run in parallel,
// one owning each file pair.
std::vector<Tile> load_tiles(const DatasetManifest& m, const std::string& root,
                             const std::string& split);

// Source scene list -> tiled dataset. Each line of source_list reads
// image <TAB> mask <TAB> city [<TAB> role] with role in {trainval, test}.
struct PrepareSpec {
  std::string source_list;
  int tile_size = 512;
  bool filter_background = true;
  double split_ratio = 0.9;
  long explicit_train_count = -1;  // <0: use the ratio
  std::string image_format = "tif";

  void validate() const;
  friend bool operator==(const PrepareSpec&, const PrepareSpec&) = default;
};

DatasetManifest prepare_dataset(const PrepareSpec& spec, std::uint64_t seed,
                                const std::string& out_dir);

}  // namespace bsm
