#include "bsm/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bsm/raster_io.hpp"
#include "bsm/rng.hpp"

namespace fs = std::filesystem;

namespace bsm {

namespace {

std::string zero_pad(long v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

std::string join_path(const std::string& root, const std::string& rel) {
  if (root.empty() || fs::path(rel).is_absolute()) return rel;
  return (fs::path(root) / rel).string();
}

// mask.png -> mask.valid.png; sidecar raster marking non-padding pixels of
// edge tiles (255 = real pixel). Only written when a tile carries padding.
std::string valid_sidecar_path(const std::string& mask_path) {
  fs::path p(mask_path);
  fs::path q = p.parent_path() / (p.stem().string() + ".valid" + p.extension().string());
  return q.string();
}

// Runs fn(i) over [0, n) in parallel and rethrows the first failure.
template <typename Fn>
void parallel_for_checked(long n, Fn&& fn) {
  std::string error;
  bool failed = false;
  #pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (const std::exception& e) {
      #pragma omp critical
      {
        if (!failed) {
          failed = true;
          error = e.what();
        }
      }
    }
  }
  if (failed) throw std::runtime_error(error);
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos
                                              ? std::string::npos
                                              : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw std::runtime_error("manifest " + path + " line " +
                               std::to_string(lineno) + ": expected 5 fields, got " +
                               std::to_string(fields.size()));
    m.entries.push_back({fields[0], fields[1], fields[2], fields[3], fields[4]});
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  for (const auto& e : m.entries)
    f << e.id << '\t' << e.image_path << '\t' << e.mask_path << '\t' << e.city
      << '\t' << e.split << '\n';
}

void validate_manifest(const DatasetManifest& m, const std::string& root) {
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (!ids.insert(e.id).second)
      throw std::runtime_error("manifest: duplicate id " + e.id);
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw std::runtime_error("manifest: bad split '" + e.split + "' for " + e.id);
  }
  if (!root.empty()) {
    parallel_for_checked(static_cast<long>(m.entries.size()), [&](long i) {
      const auto& e = m.entries[i];
      if (!fs::exists(join_path(root, e.image_path)))
        throw std::runtime_error("manifest: missing image " + e.image_path);
      if (!fs::exists(join_path(root, e.mask_path)))
        throw std::runtime_error("manifest: missing mask " + e.mask_path);
    });
  }
}

BoolGrid decode_mask(const ImageU8& raster) {
  if (raster.c != 1) throw std::runtime_error("mask raster must be single-channel");
  BoolGrid out(raster.h, raster.w);
  for (std::size_t i = 0; i < raster.v.size(); ++i) {
    const std::uint8_t v = raster.v[i];
    if (v != 0 && v != 255)
      throw std::runtime_error("mask raster value " + std::to_string(v) +
                               " at offset " + std::to_string(i) +
                               " (labels must be 0 or 255)");
    out.v[i] = v == 255 ? 1 : 0;
  }
  return out;
}

ImageU8 encode_mask(const BoolGrid& mask) {
  ImageU8 out(mask.h, mask.w, 1);
  for (std::size_t i = 0; i < mask.v.size(); ++i) out.v[i] = mask.v[i] ? 255 : 0;
  return out;
}

Tile load_tile(const std::string& image_path, const std::string& mask_path) {
  Tile t;
  t.image = read_image_rgb(image_path);
  ImageU8 raster = read_image_gray(mask_path);
  if (raster.h != t.image.h || raster.w != t.image.w)
    throw std::runtime_error("image/mask dimension mismatch: " + image_path + " is " +
                             std::to_string(t.image.h) + "x" + std::to_string(t.image.w) +
                             ", " + mask_path + " is " + std::to_string(raster.h) +
                             "x" + std::to_string(raster.w));
  t.mask = decode_mask(raster);
  t.valid = BoolGrid(t.image.h, t.image.w, true);
  return t;
}

std::vector<Tile> crop_to_tiles(const ImageU8& image, const BoolGrid& mask,
                                int tile_size, const std::string& city,
                                const std::string& id_prefix) {
  if (image.h <= 0 || image.w <= 0)
    throw std::invalid_argument("crop_to_tiles: zero-area input");
  if (tile_size <= 0) throw std::invalid_argument("crop_to_tiles: bad tile size");
  if (image.h != mask.h || image.w != mask.w)
    throw std::invalid_argument("crop_to_tiles: image/mask dimension mismatch");
  const int ny = (image.h + tile_size - 1) / tile_size;
  const int nx = (image.w + tile_size - 1) / tile_size;
  std::vector<Tile> out;
  out.reserve(static_cast<std::size_t>(ny) * nx);
  long index = 0;
  for (int ty = 0; ty < ny; ++ty) {
    for (int tx = 0; tx < nx; ++tx, ++index) {
      Tile t;
      t.city = city;
      t.id = id_prefix + zero_pad(index, 4);
      t.image = ImageU8(tile_size, tile_size, image.c, 0);
      t.mask = BoolGrid(tile_size, tile_size, false);
      t.valid = BoolGrid(tile_size, tile_size, false);
      const int y0 = ty * tile_size, x0 = tx * tile_size;
      const int hh = std::min(tile_size, image.h - y0);
      const int ww = std::min(tile_size, image.w - x0);
      for (int y = 0; y < hh; ++y) {
        for (int x = 0; x < ww; ++x) {
          for (int ch = 0; ch < image.c; ++ch)
            t.image.at(y, x, ch) = image.at(y0 + y, x0 + x, ch);
          t.mask.at(y, x) = mask.at(y0 + y, x0 + x);
          t.valid.at(y, x) = 1;
        }
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Tile> filter_background_only(const std::vector<Tile>& tiles) {
  std::vector<Tile> out;
  out.reserve(tiles.size());
  for (const auto& t : tiles)
    if (t.mask.any()) out.push_back(t);
  return out;
}

DatasetManifest filter_background_only(const DatasetManifest& m,
                                       const std::string& root) {
  std::vector<std::uint8_t> keep(m.entries.size(), 0);
  parallel_for_checked(static_cast<long>(m.entries.size()), [&](long i) {
    const ImageU8 raster = read_image_gray(join_path(root, m.entries[i].mask_path));
    keep[i] = decode_mask(raster).any() ? 1 : 0;
  });
  DatasetManifest out;
  out.seed = m.seed;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (keep[i]) out.entries.push_back(m.entries[i]);
  return out;
}

void split_trainval(DatasetManifest& m, double ratio, std::uint64_t seed,
                    std::optional<long> explicit_train_count) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("split_trainval: ratio must be in (0, 1]");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].split != "test") idx.push_back(i);
  const long n = static_cast<long>(idx.size());
  long train_count = explicit_train_count
                         ? *explicit_train_count
                         : std::llround(ratio * static_cast<double>(n));
  if (train_count > n)
    throw std::invalid_argument("split_trainval: explicit train count " +
                                std::to_string(train_count) + " exceeds " +
                                std::to_string(n) + " entries");
  if (train_count < 0) throw std::invalid_argument("split_trainval: negative count");
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (long i = 0; i < n; ++i)
    m.entries[idx[i]].split = i < train_count ? "train" : "val";
  m.seed = seed;
}

void SyntheticSpec::validate() const {
  if (tiles_per_style <= 0) throw std::invalid_argument("synthetic: tiles_per_style <= 0");
  if (tile_size <= 0) throw std::invalid_argument("synthetic: tile_size <= 0");
  if (buildings_min < 0 || buildings_max < buildings_min)
    throw std::invalid_argument("synthetic: empty building count range");
  if (building_size_min <= 0 || building_size_max < building_size_min)
    throw std::invalid_argument("synthetic: empty building size range");
  if (building_size_max > tile_size)
    throw std::invalid_argument("synthetic: building size exceeds tile size");
  if (style_a.bias == style_b.bias && style_a.gain == style_b.gain &&
      style_a.noise_sigma == style_b.noise_sigma)
    throw std::invalid_argument("synthetic: the two style parameter sets must differ");
  if (style_a.noise_sigma < 0 || style_b.noise_sigma < 0)
    throw std::invalid_argument("synthetic: negative noise sigma");
}

namespace {

Tile render_synthetic_tile(const SyntheticSpec& spec, const StyleParams& style,
                           Rng& rng) {
  const int ts = spec.tile_size;
  constexpr double kBackground = 90.0;
  constexpr double kBuilding = 170.0;

  std::vector<double> content(static_cast<std::size_t>(ts) * ts, kBackground);
  Tile t;
  t.mask = BoolGrid(ts, ts, false);
  t.valid = BoolGrid(ts, ts, true);

  std::uniform_int_distribution<int> count_dist(spec.buildings_min, spec.buildings_max);
  const int buildings = count_dist(rng);
  std::uniform_int_distribution<int> size_dist(spec.building_size_min,
                                               spec.building_size_max);
  for (int b = 0; b < buildings; ++b) {
    const int bw = std::min(size_dist(rng), ts);
    const int bh = std::min(size_dist(rng), ts);
    std::uniform_int_distribution<int> xd(0, ts - bw), yd(0, ts - bh);
    const int x0 = xd(rng), y0 = yd(rng);
    for (int y = y0; y < y0 + bh; ++y) {
      for (int x = x0; x < x0 + bw; ++x) {
        content[static_cast<std::size_t>(y) * ts + x] = kBuilding;
        t.mask.at(y, x) = 1;
      }
    }
  }

  t.image = ImageU8(ts, ts, 3);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < ts; ++y) {
    for (int x = 0; x < ts; ++x) {
      const double v = content[static_cast<std::size_t>(y) * ts + x];
      for (int ch = 0; ch < 3; ++ch) {
        double p = style.gain[ch] * v + style.bias[ch];
        if (style.noise_sigma > 0) p += style.noise_sigma * noise(rng);
        p = std::clamp(p, 0.0, 255.0);
        t.image.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(p));
      }
    }
  }
  return t;
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec,
                                           const std::string& out_dir) {
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  DatasetManifest m;
  m.seed = spec.seed;
  const StyleParams* styles[2] = {&spec.style_a, &spec.style_b};
  for (int s = 0; s < 2; ++s) {
    const StyleParams& style = *styles[s];
    for (int i = 0; i < spec.tiles_per_style; ++i) {
      Rng rng(derive_seed(spec.seed, (static_cast<std::uint64_t>(s) << 32) |
                                         static_cast<std::uint32_t>(i)));
      Tile t = render_synthetic_tile(spec, style, rng);
      t.city = style.name;
      t.id = style.name + "_" + zero_pad(i, 4);
      const std::string img_rel = "images/" + t.id + ".png";
      const std::string mask_rel = "masks/" + t.id + ".png";
      write_image((fs::path(out_dir) / img_rel).string(), t.image);
      write_image((fs::path(out_dir) / mask_rel).string(), encode_mask(t.mask));
      m.entries.push_back({t.id, img_rel, mask_rel, t.city,
                           s == 0 ? std::string("train") : std::string("test")});
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

std::vector<Tile> load_tiles(const DatasetManifest& m, const std::string& root,
                             const std::string& split) {
  std::vector<const ManifestEntry*> wanted;
  for (const auto& e : m.entries)
    if (split.empty() || e.split == split) wanted.push_back(&e);
  std::vector<Tile> out(wanted.size());
  parallel_for_checked(static_cast<long>(wanted.size()), [&](long i) {
    const ManifestEntry& e = *wanted[i];
    Tile t = load_tile(join_path(root, e.image_path), join_path(root, e.mask_path));
    t.id = e.id;
    t.city = e.city;
    const std::string sidecar = valid_sidecar_path(join_path(root, e.mask_path));
    if (fs::exists(sidecar)) t.valid = decode_mask(read_image_gray(sidecar));
    out[i] = std::move(t);
  });
  return out;
}

void PrepareSpec::validate() const {
  if (source_list.empty()) throw std::invalid_argument("prepare: source_list not set");
  if (tile_size <= 0) throw std::invalid_argument("prepare: tile_size <= 0");
  if (!(split_ratio > 0.0 && split_ratio <= 1.0))
    throw std::invalid_argument("prepare: split_ratio must be in (0, 1]");
  if (image_format != "tif" && image_format != "png")
    throw std::invalid_argument("prepare: image_format must be tif or png");
}

DatasetManifest prepare_dataset(const PrepareSpec& spec, std::uint64_t seed,
                                const std::string& out_dir) {
  spec.validate();
  std::ifstream f(spec.source_list);
  if (!f) throw std::runtime_error("cannot open source list: " + spec.source_list);
  const fs::path list_dir = fs::path(spec.source_list).parent_path();

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  DatasetManifest m;
  std::map<std::string, long> city_counter;
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string image_path, mask_path, city, role = "trainval";
    if (!std::getline(ss, image_path, '\t') || !std::getline(ss, mask_path, '\t') ||
        !std::getline(ss, city, '\t'))
      throw std::runtime_error("source list line " + std::to_string(lineno) +
                               ": expected image<TAB>mask<TAB>city[<TAB>role]");
    std::getline(ss, role, '\t');
    if (role != "trainval" && role != "test")
      throw std::runtime_error("source list line " + std::to_string(lineno) +
                               ": role must be trainval or test");

    const std::string img_abs = join_path(list_dir.string(), image_path);
    const std::string mask_abs = join_path(list_dir.string(), mask_path);
    ImageU8 scene = read_image_rgb(img_abs);
    BoolGrid scene_mask = decode_mask(read_image_gray(mask_abs));
    if (scene.h != scene_mask.h || scene.w != scene_mask.w)
      throw std::runtime_error("scene/mask dimension mismatch: " + img_abs);

    std::vector<Tile> tiles = crop_to_tiles(scene, scene_mask, spec.tile_size, city, "");
    if (spec.filter_background && role == "trainval")
      tiles = filter_background_only(tiles);

    for (Tile& t : tiles) {
      t.id = city + "_" + zero_pad(city_counter[city]++, 6);
      const std::string img_rel = "images/" + t.id + "." + spec.image_format;
      const std::string mask_rel = "masks/" + t.id + ".png";
      write_image((fs::path(out_dir) / img_rel).string(), t.image);
      write_image((fs::path(out_dir) / mask_rel).string(), encode_mask(t.mask));
      if (t.valid.count() != t.valid.v.size()) {
        const std::string sidecar =
            valid_sidecar_path((fs::path(out_dir) / mask_rel).string());
        write_image(sidecar, encode_mask(t.valid));
      }
      m.entries.push_back({t.id, img_rel, mask_rel, city,
                           role == "test" ? std::string("test") : std::string("train")});
    }
  }
  split_trainval(m, spec.split_ratio, seed,
                 spec.explicit_train_count >= 0
                     ? std::optional<long>(spec.explicit_train_count)
                     : std::nullopt);
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

SampleBatch make_batch(const std::vector<Tile>& tiles, const std::vector<int>& indices) {
  if (indices.empty()) return {};
  const Tile& first = tiles.at(indices[0]);
  const int h = first.image.h, w = first.image.w, c = first.image.c;
  SampleBatch b;
  b.images = Tensor(static_cast<int>(indices.size()), c, h, w);
  b.masks = BoolBatch(static_cast<int>(indices.size()), h, w);
  b.valid = BoolBatch(static_cast<int>(indices.size()), h, w);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tile& t = tiles.at(indices[i]);
    if (t.image.h != h || t.image.w != w || t.image.c != c)
      throw std::invalid_argument("make_batch: tiles disagree in shape");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch)
          b.images.at(static_cast<int>(i), ch, y, x) = t.image.at(y, x, ch);
        b.masks.at(static_cast<int>(i), y, x) = t.mask.at(y, x);
        b.valid.at(static_cast<int>(i), y, x) = t.valid.at(y, x);
      }
    }
  }
  return b;
}

std::vector<Tile> batch_to_tiles(const SampleBatch& batch) {
  std::vector<Tile> out(batch.size());
  for (int i = 0; i < batch.size(); ++i) {
    Tile& t = out[i];
    t.image = ImageU8(batch.images.h, batch.images.w, batch.images.c);
    t.mask = BoolGrid(batch.masks.h, batch.masks.w);
    t.valid = BoolGrid(batch.valid.h, batch.valid.w);
    for (int y = 0; y < batch.images.h; ++y) {
      for (int x = 0; x < batch.images.w; ++x) {
        for (int ch = 0; ch < batch.images.c; ++ch) {
          const double v = std::clamp(batch.images.at(i, ch, y, x), 0.0, 255.0);
          t.image.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(v));
        }
        t.mask.at(y, x) = batch.masks.at(i, y, x);
        t.valid.at(y, x) = batch.valid.at(i, y, x);
      }
    }
  }
  return out;
}

}  // namespace bsm
