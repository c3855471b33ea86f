#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bsm/data_io.hpp"
#include "bsm/trainer.hpp"

using namespace bsm;
namespace fs = std::filesystem;

namespace {

std::mt19937_64 grng(53);

Tensor random_scores(int n, int c, int h, int w) {
  Tensor t(n, c, h, w);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (double& v : t.data) v = d(grng);
  return t;
}

// independent oracle: plain softmax cross-entropy, no log-sum-exp tricks
double brute_ce(const Tensor& scores, const LabelBatch& labels, const BoolBatch& valid) {
  double total = 0;
  long count = 0;
  for (int n = 0; n < scores.n; ++n) {
    for (int y = 0; y < scores.h; ++y) {
      for (int x = 0; x < scores.w; ++x) {
        if (!valid.at(n, y, x)) continue;
        double denom = 0;
        for (int c = 0; c < scores.c; ++c) denom += std::exp(scores.at(n, c, y, x));
        total += -std::log(std::exp(scores.at(n, labels.at(n, y, x), y, x)) / denom);
        ++count;
      }
    }
  }
  return count ? total / count : 0.0;
}

std::vector<Tile> synthetic_tiles(const fs::path& dir) {
  SyntheticSpec spec;
  spec.tiles_per_style = 32;
  spec.tile_size = 32;
  spec.seed = 77;
  const DatasetManifest m = generate_synthetic_dataset(spec, dir.string());
  return load_tiles(m, dir.string(), "train");
}

SegModelConfig micro_model() {
  SegModelConfig cfg;
  cfg.encoder_channels = {4, 6, 8, 8, 8};
  cfg.stage_depth = {1, 1, 1, 1, 1};
  cfg.attention_reduction = 4;
  cfg.attention_spatial_kernel = 3;
  return cfg;
}

}  // namespace

TEST_CASE("pixel_ce_loss: saturated logits vanish, uniform logits give ln 2") {
  Tensor scores(1, 2, 4, 4);
  LabelBatch labels(1, 4, 4);
  BoolBatch valid(1, 4, 4, true);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      labels.at(0, y, x) = (y + x) % 2;
      scores.at(0, labels.at(0, y, x), y, x) = 20.0;  // margin 20 for the true class
    }
  }
  CHECK(pixel_ce_loss(scores, labels, valid) < 1e-6);

  scores.fill(0.0);
  CHECK(pixel_ce_loss(scores, labels, valid) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("pixel_ce_loss equals the brute-force definition and honors the mask") {
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor scores = random_scores(2, 3, 5, 7);
    LabelBatch labels(2, 5, 7);
    BoolBatch valid(2, 5, 7);
    std::uniform_int_distribution<int> ld(0, 2);
    std::bernoulli_distribution vd(0.7);
    for (auto& l : labels.v) l = ld(grng);
    for (auto& v : valid.v) v = vd(grng) ? 1 : 0;
    CHECK(pixel_ce_loss(scores, labels, valid) ==
          doctest::Approx(brute_ce(scores, labels, valid)).epsilon(1e-10));
  }

  // nothing valid -> loss 0
  const Tensor scores = random_scores(1, 2, 4, 4);
  LabelBatch labels(1, 4, 4);
  BoolBatch none(1, 4, 4, false);
  CHECK(pixel_ce_loss(scores, labels, none) == 0.0);

  LabelBatch bad(1, 4, 4);
  bad.v[3] = 7;
  BoolBatch valid(1, 4, 4, true);
  CHECK_THROWS(pixel_ce_loss(scores, bad, valid));
}

TEST_CASE("pixel_ce_loss gradient matches finite differences") {
  Tensor scores = random_scores(1, 2, 3, 3);
  LabelBatch labels(1, 3, 3);
  BoolBatch valid(1, 3, 3, true);
  labels.at(0, 1, 1) = 1;
  valid.at(0, 0, 0) = 0;  // one ignored pixel exercises the mask path

  Tensor d;
  pixel_ce_loss(scores, labels, valid, &d);
  const double h = 1e-6;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double save = scores.data[k];
    scores.data[k] = save + h;
    const double up = pixel_ce_loss(scores, labels, valid);
    scores.data[k] = save - h;
    const double dn = pixel_ce_loss(scores, labels, valid);
    scores.data[k] = save;
    CHECK(d.data[k] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("scale-loss combination follows the 0.25/0.25/0.25/0.25/0.5 weighting") {
  const std::array<double, 5> w{0.25, 0.25, 0.25, 0.25, 0.5};
  CHECK(combine_scale_losses({1, 1, 1, 1, 1}, w) == doctest::Approx(1.5));
  CHECK(combine_scale_losses({0, 0, 0, 0, 0}, w) == 0.0);
  CHECK(combine_scale_losses({0.1, 0.2, 0.3, 0.4, 0.5}, w) == doctest::Approx(0.50));

  std::uniform_real_distribution<double> d(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::array<double, 5> l;
    for (double& v : l) v = d(grng);
    const double expect = 0.25 * (l[0] + l[1] + l[2] + l[3]) + 0.5 * l[4];
    CHECK(combine_scale_losses(l, w) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("multiscale_loss: per-scale CE against nearest-downsampled labels") {
  PredictionPyramid pyr;
  const int factors[5] = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i) pyr.maps[i] = random_scores(1, 2, 32 / factors[i], 32 / factors[i]);
  LabelBatch labels(1, 32, 32);
  BoolBatch valid(1, 32, 32, true);
  std::uniform_int_distribution<int> ld(0, 1);
  for (auto& l : labels.v) l = ld(grng);

  const std::array<double, 5> w{0.25, 0.25, 0.25, 0.25, 0.5};
  const MultiscaleLoss ml = multiscale_loss(pyr, labels, valid, w);

  double expect = 0;
  for (int i = 0; i < 5; ++i) {
    const LabelBatch l = downsample_nearest(labels, factors[i]);
    const BoolBatch v = downsample_nearest(valid, factors[i]);
    const double li = brute_ce(pyr.maps[i], l, v);
    CHECK(ml.per_scale[i] == doctest::Approx(li).epsilon(1e-10));
    expect += w[i] * li;
  }
  CHECK(ml.total == doctest::Approx(expect).epsilon(1e-10));

  PredictionPyramid bad = pyr;
  bad.maps[2] = random_scores(1, 2, 5, 5);
  CHECK_THROWS(multiscale_loss(bad, labels, valid, w));
}

TEST_CASE("nearest downsampling takes the top-left pixel of each block") {
  LabelBatch l(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) l.at(0, y, x) = y * 4 + x;
  const LabelBatch d = downsample_nearest(l, 2);
  CHECK(d.at(0, 0, 0) == 0);
  CHECK(d.at(0, 0, 1) == 2);
  CHECK(d.at(0, 1, 0) == 8);
  CHECK(d.at(0, 1, 1) == 10);
}

TEST_CASE("poly schedule: endpoints, the 0.5^0.9 midpoint, monotonicity") {
  CHECK(poly_lr(1e-4, 0, 1000) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(poly_lr(1e-4, 1000, 1000) == 0.0);
  CHECK(poly_lr(1e-4, 500, 1000, 0.9) ==
        doctest::Approx(0.5358867312681466e-4).epsilon(1e-9));
  double prev = poly_lr(1.0, 0, 100);
  for (long it = 1; it <= 100; ++it) {
    const double lr = poly_lr(1.0, it, 100);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK_THROWS(poly_lr(1e-4, 0, 0));
  CHECK_THROWS(poly_lr(1e-4, -1, 10));
  CHECK_THROWS(poly_lr(1e-4, 11, 10));
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_THROWS(tc.validate());  // total_iterations unset
  tc.total_iterations = 10;
  CHECK_NOTHROW(tc.validate());
  tc.base_lr = 0;
  CHECK_THROWS(tc.validate());
}

TEST_CASE("zero-iteration training emits a checkpoint equal to the initialization") {
  const fs::path dir = fs::temp_directory_path() / "bsm_train_zero";
  fs::remove_all(dir);
  const fs::path data = dir / "data";
  const std::vector<Tile> tiles = synthetic_tiles(data);

  SegNet model(micro_model(), 101);
  std::vector<Tensor> init;
  for (const Param& p : model.params()) init.push_back(p.value);

  TrainConfig tc;
  tc.total_iterations = 0;
  tc.batch_size = 4;
  tc.seed = 9;
  BsmConfig bsm;
  const TrainResult r = train(model, tiles, bsm, tc, (dir / "run").string(), "h", false);
  CHECK_FALSE(r.aborted);

  SegNet reload(micro_model(), 555);
  load_checkpoint(r.checkpoint_path, reload);
  for (std::size_t i = 0; i < init.size(); ++i)
    CHECK(reload.params()[i].value == init[i]);
}

TEST_CASE("smoke descent: 200 iterations reduce the loss on synthetic tiles") {
  const fs::path dir = fs::temp_directory_path() / "bsm_train_smoke";
  fs::remove_all(dir);
  const std::vector<Tile> tiles = synthetic_tiles(dir / "data");
  REQUIRE(tiles.size() == 32);

  SegNet model(micro_model(), 103);
  TrainConfig tc;
  tc.total_iterations = 200;
  tc.batch_size = 4;
  tc.base_lr = 1e-3;  // tiny model trains faster at a slightly higher rate
  tc.seed = 5;
  BsmConfig bsm;
  const TrainResult r = train(model, tiles, bsm, tc, (dir / "run").string(), "h", false);
  REQUIRE_FALSE(r.aborted);
  REQUIRE(r.losses.size() == 200);
  for (double l : r.losses) REQUIRE(std::isfinite(l));

  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += r.losses[i];
    tail += r.losses[200 - 20 + i];
  }
  CHECK(tail / 20 < head / 20);

  // the metrics log holds one iteration<TAB>loss<TAB>lr line per step
  std::ifstream log(r.log_path);
  std::string line;
  long lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 2);
  }
  CHECK(lines == 200);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const fs::path dir = fs::temp_directory_path() / "bsm_train_det";
  fs::remove_all(dir);
  const std::vector<Tile> tiles = synthetic_tiles(dir / "data");

  TrainConfig tc;
  tc.total_iterations = 25;
  tc.batch_size = 4;
  tc.seed = 31;
  BsmConfig bsm;

  SegNet m1(micro_model(), 7);
  const TrainResult r1 = train(m1, tiles, bsm, tc, (dir / "a").string(), "h", false);
  SegNet m2(micro_model(), 7);
  const TrainResult r2 = train(m2, tiles, bsm, tc, (dir / "b").string(), "h", false);

  CHECK(r1.losses == r2.losses);
  CHECK(r1.data_order_hash == r2.data_order_hash);
  std::ifstream f1(r1.log_path), f2(r2.log_path);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {});
  const std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  for (std::size_t i = 0; i < m1.params().size(); ++i)
    CHECK(m1.params()[i].value == m2.params()[i].value);
}

TEST_CASE("non-finite loss aborts with a diagnostic and keeps a checkpoint") {
  const fs::path dir = fs::temp_directory_path() / "bsm_train_abort";
  fs::remove_all(dir);
  const std::vector<Tile> tiles = synthetic_tiles(dir / "data");

  SegNet model(micro_model(), 11);
  TrainConfig tc;
  tc.total_iterations = 50;
  tc.batch_size = 4;
  tc.base_lr = 1e14;  // blows the parameters up within a few steps
  tc.seed = 3;
  BsmConfig bsm;
  const TrainResult r = train(model, tiles, bsm, tc, (dir / "run").string(), "h", false);
  CHECK(r.aborted);
  CHECK(r.abort_reason.find("non-finite") != std::string::npos);
  CHECK(fs::exists(r.checkpoint_path));
  SegNet reload(micro_model(), 1);
  CHECK_NOTHROW(load_checkpoint(r.checkpoint_path, reload));
}

TEST_CASE("augmentation trace records one line per batch when enabled") {
  const fs::path dir = fs::temp_directory_path() / "bsm_train_trace";
  fs::remove_all(dir);
  const std::vector<Tile> tiles = synthetic_tiles(dir / "data");

  SegNet model(micro_model(), 13);
  TrainConfig tc;
  tc.total_iterations = 6;
  tc.batch_size = 4;
  tc.seed = 21;
  BsmConfig bsm;
  train(model, tiles, bsm, tc, (dir / "run").string(), "h", true);
  std::ifstream trace(dir / "run" / "augment_trace.log");
  REQUIRE(trace.good());
  std::string line;
  long lines = 0;
  while (std::getline(trace, line)) {
    ++lines;
    CHECK(line.find("batch=") == 0);
    CHECK(line.find("seed=") != std::string::npos);
  }
  CHECK(lines == 6);
}
