#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "bsm/model.hpp"

using namespace bsm;
namespace fs = std::filesystem;

namespace {

std::mt19937_64 grng(17);

Tensor random_images(int n, int h, int w) {
  Tensor t(n, 3, h, w);
  std::uniform_real_distribution<double> d(0.0, 255.0);
  for (double& v : t.data) v = d(grng);
  return t;
}

SegModelConfig tiny_config() {
  SegModelConfig cfg;
  cfg.encoder_channels = {4, 6, 8, 8, 8};
  cfg.stage_depth = {1, 1, 1, 1, 1};
  cfg.attention_reduction = 4;
  cfg.attention_spatial_kernel = 3;
  return cfg;
}

}  // namespace

TEST_CASE("pyramid scales are exactly 1/16 .. 1/1 of the input") {
  SegNet model(SegModelConfig{}, 1);  // desk-scale default channels

  const Tensor in = random_images(2, 64, 64);
  const PredictionPyramid pyr = model.forward_train(in);
  const int expected[5] = {4, 8, 16, 32, 64};
  for (int i = 0; i < 5; ++i) {
    CHECK(pyr.maps[i].h == expected[i]);
    CHECK(pyr.maps[i].w == expected[i]);
    CHECK(pyr.maps[i].n == 2);
    CHECK(pyr.maps[i].c == 2);
    CHECK(pyr.maps[i].all_finite());
  }

  CHECK_THROWS(model.forward_train(random_images(1, 20, 20)));
  CHECK_THROWS(model.forward_train(Tensor(1, 1, 64, 64)));
}

TEST_CASE("pyramid scales hold for rectangular inputs") {
  SegNet model(tiny_config(), 3);
  const Tensor in = random_images(1, 32, 64);
  const PredictionPyramid pyr = model.forward_train(in);
  CHECK(pyr.maps[0].h == 2);
  CHECK(pyr.maps[0].w == 4);
  CHECK(pyr.maps[4].h == 32);
  CHECK(pyr.maps[4].w == 64);
}

TEST_CASE("forward_infer equals the full-resolution training map bitwise") {
  SegNet model(tiny_config(), 11);
  const Tensor in = random_images(2, 32, 32);
  const PredictionPyramid pyr = model.forward_train(in);
  const Tensor inf = model.forward_infer(in);
  CHECK(inf == pyr.maps[4]);
}

TEST_CASE("argmax over the inference map yields a boolean building mask") {
  SegNet model(tiny_config(), 13);
  const Tensor logits = model.forward_infer(random_images(1, 32, 32));
  REQUIRE(logits.c == 2);
  long building = 0;
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x)
      building += logits.at(0, 1, y, x) > logits.at(0, 0, y, x) ? 1 : 0;
  CHECK(building >= 0);
  CHECK(building <= logits.h * logits.w);
}

TEST_CASE("attention: zero input keeps shape and stays finite") {
  SegNet model(tiny_config(), 5);
  Tensor zero(2, 8, 4, 4);
  const Tensor out = model.attention_fuse(zero);
  CHECK(out.n == 2);
  CHECK(out.c == 8);
  CHECK(out.h == 4);
  CHECK(out.w == 4);
  CHECK(out.all_finite());
}

TEST_CASE("attention: saturated gates double the input under sum fusion") {
  SegNet model(tiny_config(), 7);
  // zero the gate convolutions and push their biases far positive so both
  // branch weights sit at sigmoid(large) ~= 1
  for (const char* name : {"att.cam.fc1.weight", "att.cam.fc2.weight", "att.pam.conv.weight"})
    model.param(name).value.fill(0.0);
  model.param("att.cam.fc1.bias").value.fill(0.0);
  model.param("att.cam.fc2.bias").value.fill(40.0);
  model.param("att.pam.conv.bias").value.fill(40.0);

  Tensor x(1, 8, 4, 4);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (double& v : x.data) v = d(grng);
  const Tensor out = model.attention_fuse(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-12));
}

TEST_CASE("attention: gate weights lie strictly inside (0, 1)") {
  // reconstruct the channel gate response from saturating inputs: even for
  // extreme activations the branch weights must stay in the open interval
  SegNet model(tiny_config(), 19);
  Tensor x(1, 8, 4, 4);
  x.fill(1e6);
  const Tensor big = model.attention_fuse(x);
  for (std::size_t i = 0; i < big.size(); ++i) {
    const double ratio = big.data[i] / x.data[i];  // s + q for that site
    CHECK(ratio > 0.0);
    CHECK(ratio < 2.0);
  }
}

TEST_CASE("attention: perturbing one site changes other sites (non-local mixing)") {
  SegNet model(tiny_config(), 23);
  Tensor x(1, 8, 6, 6);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (double& v : x.data) v = d(grng);
  const Tensor base = model.attention_fuse(x);
  Tensor x2 = x;
  x2.at(0, 2, 3, 4) += 0.75;
  const Tensor bumped = model.attention_fuse(x2);
  bool other_site_changed = false;
  for (int c = 0; c < 8 && !other_site_changed; ++c)
    for (int y = 0; y < 6 && !other_site_changed; ++y)
      for (int xx = 0; xx < 6 && !other_site_changed; ++xx) {
        if (y == 3 && xx == 4) continue;
        if (base.at(0, c, y, xx) != bumped.at(0, c, y, xx)) other_site_changed = true;
      }
  CHECK(other_site_changed);
}

TEST_CASE("analytic gradients match central finite differences (<1e-3 relative)") {
  SegNet model(tiny_config(), 29);
  const Tensor in = random_images(1, 32, 32);

  // projection tensors make the objective sensitive to every map entry
  std::array<Tensor, 5> proj;
  {
    PredictionPyramid shape_probe = model.forward_train(in);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int i = 0; i < 5; ++i) {
      proj[i] = Tensor::zeros_like(shape_probe.maps[i]);
      for (double& v : proj[i].data) v = d(grng);
    }
  }

  auto objective = [&]() {
    SegNet* m = &model;
    const PredictionPyramid pyr = m->forward_train(in);
    double s = 0.0;
    for (int i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < pyr.maps[i].size(); ++k)
        s += pyr.maps[i].data[k] * proj[i].data[k];
    return s;
  };

  objective();
  model.backward(proj);

  // snapshot the analytic grads before the finite-difference sweeps
  std::vector<Tensor> grads;
  for (const Param& p : model.params()) grads.push_back(p.grad);

  std::uniform_int_distribution<std::size_t> pick_param(0, model.params().size() - 1);
  int checked = 0;
  double worst = 0.0;
  while (checked < 25) {
    const std::size_t pi = pick_param(grng);
    Param& p = model.params()[pi];
    std::uniform_int_distribution<std::size_t> pick_idx(0, p.value.size() - 1);
    const std::size_t k = pick_idx(grng);
    const double save = p.value.data[k];
    const double h = 1e-5 * std::max(1.0, std::abs(save));
    p.value.data[k] = save + h;
    const double up = objective();
    p.value.data[k] = save - h;
    const double dn = objective();
    p.value.data[k] = save;
    const double fd = (up - dn) / (2 * h);
    const double analytic = grads[pi].data[k];
    const double rel =
        std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8});
    worst = std::max(worst, rel);
    CHECK(rel < 1e-3);
    ++checked;
  }
  MESSAGE("worst relative gradient error: ", worst);
}

TEST_CASE("gradients also check out with attention disabled and deeper stages") {
  SegModelConfig cfg = tiny_config();
  cfg.attention = false;
  cfg.stage_depth = {2, 1, 1, 1, 1};
  SegNet model(cfg, 31);
  const Tensor in = random_images(1, 32, 32);
  PredictionPyramid probe = model.forward_train(in);
  std::array<Tensor, 5> proj;
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    proj[i] = Tensor::zeros_like(probe.maps[i]);
    for (double& v : proj[i].data) v = d(grng);
  }
  auto objective = [&]() {
    const PredictionPyramid pyr = model.forward_train(in);
    double s = 0.0;
    for (int i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < pyr.maps[i].size(); ++k)
        s += pyr.maps[i].data[k] * proj[i].data[k];
    return s;
  };
  objective();
  model.backward(proj);
  std::vector<Tensor> grads;
  for (const Param& p : model.params()) grads.push_back(p.grad);

  std::uniform_int_distribution<std::size_t> pick_param(0, model.params().size() - 1);
  for (int checked = 0; checked < 12; ++checked) {
    const std::size_t pi = pick_param(grng);
    Param& p = model.params()[pi];
    std::uniform_int_distribution<std::size_t> pick_idx(0, p.value.size() - 1);
    const std::size_t k = pick_idx(grng);
    const double save = p.value.data[k];
    const double h = 1e-5 * std::max(1.0, std::abs(save));
    p.value.data[k] = save + h;
    const double up = objective();
    p.value.data[k] = save - h;
    const double dn = objective();
    p.value.data[k] = save;
    const double fd = (up - dn) / (2 * h);
    const double rel = std::abs(grads[pi].data[k] - fd) /
                       std::max({std::abs(grads[pi].data[k]), std::abs(fd), 1e-8});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("forward stays finite over many random inputs") {
  SegModelConfig cfg;
  cfg.encoder_channels = {2, 2, 2, 2, 2};
  cfg.stage_depth = {1, 1, 1, 1, 1};
  cfg.attention_reduction = 2;
  cfg.attention_spatial_kernel = 3;
  SegNet model(cfg, 37);
  for (int t = 0; t < 1000; ++t) {
    const Tensor out = model.forward_infer(random_images(1, 16, 16));
    REQUIRE(out.all_finite());
  }
}

TEST_CASE("checkpoints: save/load round-trip preserves behavior") {
  const fs::path dir = fs::temp_directory_path() / "bsm_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.bsa").string();

  SegNet model(tiny_config(), 41);
  const Tensor in = random_images(1, 32, 32);
  const Tensor before = model.forward_infer(in);
  save_checkpoint(path, model, {{"iteration", "123"}, {"config_hash", "cafe"}});

  SegNet fresh(tiny_config(), 999);  // different init
  CHECK_FALSE(fresh.forward_infer(in) == before);
  const auto meta = load_checkpoint(path, fresh);
  CHECK(fresh.forward_infer(in) == before);
  bool saw_iter = false;
  for (const auto& [k, v] : meta)
    if (k == "iteration" && v == "123") saw_iter = true;
  CHECK(saw_iter);

  SegModelConfig other = tiny_config();
  other.encoder_channels = {4, 6, 8, 8, 16};
  SegNet mismatched(other, 1);
  CHECK_THROWS(load_checkpoint(path, mismatched));

  // lenient loading takes only matching arrays
  const int taken = load_matching_params(path, mismatched);
  CHECK(taken > 0);
  CHECK(taken < static_cast<int>(mismatched.params().size()));
}

TEST_CASE("model config validation") {
  SegModelConfig cfg;
  cfg.encoder_channels = {16, 32, 64};
  CHECK_THROWS(cfg.validate());
  cfg = SegModelConfig{};
  cfg.num_classes = 1;
  CHECK_THROWS(cfg.validate());
  cfg = SegModelConfig{};
  cfg.attention_spatial_kernel = 4;
  CHECK_THROWS(cfg.validate());
  CHECK_NOTHROW(SegModelConfig::full_scale().validate());
}

TEST_CASE("attention_fuse is rejected when attention is disabled") {
  SegModelConfig cfg = tiny_config();
  cfg.attention = false;
  SegNet model(cfg, 2);
  CHECK_THROWS(model.attention_fuse(Tensor(1, 8, 4, 4)));
}
