#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "bsm/data_io.hpp"
#include "bsm/raster_io.hpp"

using namespace bsm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("bsm_data_io_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

BoolGrid random_mask(int h, int w, std::mt19937_64& rng, double density = 0.3) {
  BoolGrid m(h, w);
  std::bernoulli_distribution d(density);
  for (auto& v : m.v) v = d(rng) ? 1 : 0;
  return m;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("mask decode/encode: 255 means building, anything else is rejected") {
  ImageU8 raster(2, 2, 1);
  raster.v = {0, 255, 0, 255};
  const BoolGrid m = decode_mask(raster);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(0, 1) == 1);
  CHECK(encode_mask(m) == raster);

  ImageU8 zeros(3, 3, 1, 0);
  CHECK_FALSE(decode_mask(zeros).any());

  ImageU8 bad(1, 2, 1);
  bad.v = {0, 128};
  CHECK_THROWS_WITH_AS(decode_mask(bad), doctest::Contains("128"), std::runtime_error);
}

TEST_CASE("mask roundtrip: decode(encode(m)) == m and encode(decode(r)) == r") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const BoolGrid m = random_mask(17, 23, rng);
    CHECK(decode_mask(encode_mask(m)) == m);
    ImageU8 raster = encode_mask(m);
    CHECK(encode_mask(decode_mask(raster)) == raster);
  }
}

TEST_CASE("load_tile reads pairs, rejects mismatches and bad rasters") {
  const fs::path dir = temp_dir("load_tile");
  std::mt19937_64 rng(11);

  ImageU8 img(16, 16, 3);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.v) v = static_cast<std::uint8_t>(d(rng));
  const BoolGrid mask = random_mask(16, 16, rng);
  write_image((dir / "t.tif").string(), img);
  write_image((dir / "m.png").string(), encode_mask(mask));

  const Tile t = load_tile((dir / "t.tif").string(), (dir / "m.png").string());
  CHECK(t.image == img);
  CHECK(t.mask == mask);
  CHECK(t.valid.count() == 16 * 16);

  CHECK_THROWS(load_tile((dir / "missing.tif").string(), (dir / "m.png").string()));

  ImageU8 small_mask(8, 8, 1, 0);
  write_image((dir / "small.png").string(), small_mask);
  CHECK_THROWS_WITH_AS(
      load_tile((dir / "t.tif").string(), (dir / "small.png").string()),
      doctest::Contains("dimension mismatch"), std::runtime_error);

  ImageU8 gray(16, 16, 1, 100);  // 100 is not a legal label value
  write_image((dir / "gray.png").string(), gray);
  CHECK_THROWS(load_tile((dir / "t.tif").string(), (dir / "gray.png").string()));
}

TEST_CASE("crop_to_tiles: exact fit gives one tile, grid reassembles the input") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> d(0, 255);

  // default 512 tile size: a 512x512 scene is exactly one tile
  {
    ImageU8 img(512, 512, 3);
    for (auto& v : img.v) v = static_cast<std::uint8_t>(d(rng));
    const BoolGrid mask = random_mask(512, 512, rng);
    const auto tiles = crop_to_tiles(img, mask);
    REQUIRE(tiles.size() == 1);
    CHECK(tiles[0].image == img);
    CHECK(tiles[0].mask == mask);
    CHECK(tiles[0].valid.count() == 512u * 512u);
  }

  // 128x128 with 64-tiles: 4 tiles whose reassembly equals the input
  {
    ImageU8 img(128, 128, 3);
    for (auto& v : img.v) v = static_cast<std::uint8_t>(d(rng));
    const BoolGrid mask = random_mask(128, 128, rng);
    const auto tiles = crop_to_tiles(img, mask, 64, "cityx", "cityx_");
    REQUIRE(tiles.size() == 4);
    CHECK(tiles[0].id == "cityx_0000");
    CHECK(tiles[3].id == "cityx_0003");
    ImageU8 re_img(128, 128, 3);
    BoolGrid re_mask(128, 128);
    for (int ty = 0; ty < 2; ++ty) {
      for (int tx = 0; tx < 2; ++tx) {
        const Tile& t = tiles[ty * 2 + tx];
        for (int y = 0; y < 64; ++y) {
          for (int x = 0; x < 64; ++x) {
            for (int c = 0; c < 3; ++c)
              re_img.at(ty * 64 + y, tx * 64 + x, c) = t.image.at(y, x, c);
            re_mask.at(ty * 64 + y, tx * 64 + x) = t.mask.at(y, x);
          }
        }
      }
    }
    CHECK(re_img == img);
    CHECK(re_mask == mask);
  }
}

TEST_CASE("crop_to_tiles: remainders are padded and flagged invalid") {
  ImageU8 img(100, 130, 3, 9);
  BoolGrid mask(100, 130, true);
  const auto tiles = crop_to_tiles(img, mask, 64);
  REQUIRE(tiles.size() == 2u * 3u);
  // bottom-right tile covers rows 64..99, cols 128..129
  const Tile& t = tiles.back();
  CHECK(t.valid.count() == 36u * 2u);
  CHECK(t.image.at(0, 0, 0) == 9);
  CHECK(t.image.at(0, 2, 0) == 0);  // padded pixel
  CHECK(t.mask.at(0, 2) == 0);
  CHECK(t.valid.at(0, 0) == 1);
  CHECK(t.valid.at(0, 2) == 0);

  CHECK_THROWS(crop_to_tiles(ImageU8(), BoolGrid(), 64));
}

TEST_CASE("filter_background_only keeps exactly the tiles with a building pixel") {
  std::vector<Tile> tiles(10);
  for (int i = 0; i < 10; ++i) {
    tiles[i].id = "t" + std::to_string(i);
    tiles[i].image = ImageU8(8, 8, 3);
    tiles[i].mask = BoolGrid(8, 8);
    if (i % 3 != 0) tiles[i].mask.at(i % 8, 2) = 1;  // 0, 3, 6, 9 stay empty
  }
  // exhaustive per-tile any() scan as the oracle
  std::vector<std::string> expected_ids;
  for (const Tile& t : tiles) {
    bool any = false;
    for (auto v : t.mask.v) any = any || (v != 0);
    if (any) expected_ids.push_back(t.id);
  }
  REQUIRE(expected_ids.size() == 6);

  const auto kept = filter_background_only(tiles);
  REQUIRE(kept.size() == expected_ids.size());
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].id == expected_ids[i]);

  // no background-only tiles -> identity
  const auto again = filter_background_only(kept);
  CHECK(again.size() == kept.size());
}

TEST_CASE("split_trainval: partition, determinism, explicit counts") {
  DatasetManifest m;
  for (int i = 0; i < 10; ++i)
    m.entries.push_back({"id" + std::to_string(i), "i.png", "m.png", "c", "train"});

  SUBCASE("ratio 0.9 on N=10 gives 9/1, deterministic under the seed") {
    split_trainval(m, 0.9, 1234);
    long train = 0, val = 0;
    std::vector<std::string> first;
    for (const auto& e : m.entries) {
      (e.split == "train" ? train : val)++;
      first.push_back(e.split);
    }
    CHECK(train == 9);
    CHECK(val == 1);
    split_trainval(m, 0.9, 1234);
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      CHECK(m.entries[i].split == first[i]);
  }

  SUBCASE("ratio 1.0 puts everything in train") {
    split_trainval(m, 1.0, 7);
    for (const auto& e : m.entries) CHECK(e.split == "train");
  }

  SUBCASE("explicit count wins over the ratio; oversize count rejected") {
    split_trainval(m, 0.5, 7, 8);
    long train = 0;
    for (const auto& e : m.entries)
      if (e.split == "train") ++train;
    CHECK(train == 8);
    CHECK_THROWS(split_trainval(m, 0.5, 7, 11));
  }

  SUBCASE("test entries are never relabeled") {
    m.entries[4].split = "test";
    split_trainval(m, 0.5, 9);
    CHECK(m.entries[4].split == "test");
    long train = 0, val = 0;
    for (const auto& e : m.entries) {
      if (e.split == "train") ++train;
      if (e.split == "val") ++val;
    }
    CHECK(train + val == 9);
  }

  SUBCASE("bad ratio rejected") {
    CHECK_THROWS(split_trainval(m, 0.0, 1));
    CHECK_THROWS(split_trainval(m, 1.5, 1));
  }
}

TEST_CASE("manifest read/write round-trip and validation") {
  const fs::path dir = temp_dir("manifest");
  DatasetManifest m;
  m.entries.push_back({"a_0", "images/a_0.png", "masks/a_0.png", "a", "train"});
  m.entries.push_back({"a_1", "images/a_1.png", "masks/a_1.png", "a", "test"});
  const std::string path = (dir / "manifest.tsv").string();
  write_manifest(path, m);
  const DatasetManifest back = read_manifest(path);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].id == "a_0");
  CHECK(back.entries[1].split == "test");

  validate_manifest(back, "");                          // ids unique, splits sane
  CHECK_THROWS(validate_manifest(back, dir.string()));  // files do not exist

  DatasetManifest dup = back;
  dup.entries.push_back(dup.entries[0]);
  CHECK_THROWS_WITH_AS(validate_manifest(dup, ""), doctest::Contains("duplicate"),
                       std::runtime_error);

  std::ofstream f(path, std::ios::app);
  f << "only\tthree\tfields\n";
  f.close();
  CHECK_THROWS(read_manifest(path));
}

TEST_CASE("synthetic generator: deterministic, style means differ by the bias") {
  const fs::path dir_a = temp_dir("synth_a");
  const fs::path dir_b = temp_dir("synth_b");
  SyntheticSpec spec;
  spec.tiles_per_style = 4;
  spec.tile_size = 32;
  spec.seed = 99;
  // pure bias difference so the channel-mean margin is predictable
  spec.style_a = StyleParams{"styleA", {40, 40, 40}, {1, 1, 1}, 3.0};
  spec.style_b = StyleParams{"styleB", {-20, -20, -20}, {1, 1, 1}, 3.0};

  const DatasetManifest m1 = generate_synthetic_dataset(spec, dir_a.string());
  const DatasetManifest m2 = generate_synthetic_dataset(spec, dir_b.string());
  REQUIRE(m1.entries.size() == 8);

  // same spec/seed twice -> byte-identical datasets
  for (std::size_t i = 0; i < m1.entries.size(); ++i) {
    CHECK(file_bytes(dir_a / m1.entries[i].image_path) ==
          file_bytes(dir_b / m2.entries[i].image_path));
    CHECK(file_bytes(dir_a / m1.entries[i].mask_path) ==
          file_bytes(dir_b / m2.entries[i].mask_path));
  }

  // style A tiles are train, style B test; ids follow city + number
  for (const auto& e : m1.entries) {
    CHECK(e.id.substr(0, e.city.size() + 1) == e.city + "_");
    if (e.city == "styleA") CHECK(e.split == "train");
    if (e.city == "styleB") CHECK(e.split == "test");
  }

  // mean intensity difference >= bias difference minus a noise margin
  const std::vector<Tile> tiles = load_tiles(m1, dir_a.string(), "");
  double mean_a = 0, mean_b = 0;
  long na = 0, nb = 0;
  for (const Tile& t : tiles) {
    double s = 0;
    for (auto v : t.image.v) s += v;
    s /= static_cast<double>(t.image.v.size());
    if (t.city == "styleA") {
      mean_a += s;
      ++na;
    } else {
      mean_b += s;
      ++nb;
    }
  }
  mean_a /= na;
  mean_b /= nb;
  CHECK(mean_a - mean_b >= 60.0 - 5.0);
}

TEST_CASE("synthetic generator: zero buildings means all-false masks") {
  const fs::path dir = temp_dir("synth_empty");
  SyntheticSpec spec;
  spec.tiles_per_style = 2;
  spec.tile_size = 24;
  spec.buildings_min = 0;
  spec.buildings_max = 0;
  const DatasetManifest m = generate_synthetic_dataset(spec, dir.string());
  for (const Tile& t : load_tiles(m, dir.string(), ""))
    CHECK_FALSE(t.mask.any());
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.style_b = spec.style_a;
  CHECK_THROWS(spec.validate());
  spec = SyntheticSpec{};
  spec.buildings_min = 5;
  spec.buildings_max = 2;
  CHECK_THROWS(spec.validate());
  spec = SyntheticSpec{};
  spec.building_size_max = spec.tile_size + 1;
  CHECK_THROWS(spec.validate());
}

TEST_CASE("manifest-level background filter uses the on-disk masks") {
  const fs::path dir = temp_dir("filter_manifest");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "images");
  DatasetManifest m;
  for (int i = 0; i < 6; ++i) {
    BoolGrid mask(4, 4);
    if (i % 2 == 0) mask.at(1, 1) = 1;
    const std::string rel = "masks/t" + std::to_string(i) + ".png";
    write_image((dir / rel).string(), encode_mask(mask));
    ImageU8 img(4, 4, 3, 50);
    const std::string img_rel = "images/t" + std::to_string(i) + ".png";
    write_image((dir / img_rel).string(), img);
    m.entries.push_back({"t" + std::to_string(i), img_rel, rel, "c", "train"});
  }
  const DatasetManifest kept = filter_background_only(m, dir.string());
  CHECK(kept.entries.size() == 3);
  for (const auto& e : kept.entries) CHECK(std::stoi(e.id.substr(1)) % 2 == 0);
}

TEST_CASE("prepare_dataset tiles scenes, filters trainval, keeps test intact") {
  const fs::path dir = temp_dir("prepare");
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> d(0, 255);
  ImageU8 scene(128, 128, 3);
  for (auto& v : scene.v) v = static_cast<std::uint8_t>(d(rng));
  BoolGrid mask(128, 128);
  for (int y = 10; y < 30; ++y)
    for (int x = 5; x < 25; ++x) mask.at(y, x) = 1;  // one tile's worth
  write_image((dir / "scene.tif").string(), scene);
  write_image((dir / "scene_mask.png").string(), encode_mask(mask));

  ImageU8 test_scene(64, 64, 3, 90);
  BoolGrid test_mask(64, 64);
  test_mask.at(3, 3) = 1;
  write_image((dir / "test.tif").string(), test_scene);
  write_image((dir / "test_mask.png").string(), encode_mask(test_mask));

  std::ofstream list(dir / "sources.tsv");
  list << "scene.tif\tscene_mask.png\talpha\ttrainval\n";
  list << "test.tif\ttest_mask.png\tbeta\ttest\n";
  list.close();

  PrepareSpec spec;
  spec.source_list = (dir / "sources.tsv").string();
  spec.tile_size = 64;
  spec.split_ratio = 0.9;
  spec.image_format = "png";
  const DatasetManifest m = prepare_dataset(spec, 5, (dir / "out").string());

  // 128x128 -> 4 tiles, 3 background-only and filtered; plus the test tile
  REQUIRE(m.entries.size() == 2);
  long test_count = 0;
  for (const auto& e : m.entries)
    if (e.split == "test") ++test_count;
  CHECK(test_count == 1);

  validate_manifest(m, (dir / "out").string());
  const std::vector<Tile> tiles = load_tiles(m, (dir / "out").string(), "");
  for (const Tile& t : tiles) {
    CHECK(t.mask.any());
    CHECK(t.valid.count() == t.valid.v.size());
  }
}
