#include "bsm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsm/archive.hpp"
#include "bsm/kernels.hpp"
#include "bsm/rng.hpp"

namespace bsm {

void SegModelConfig::validate() const {
  if (encoder_channels.size() != 5)
    throw std::invalid_argument("model: exactly five encoder stages required");
  if (stage_depth.size() != 5)
    throw std::invalid_argument("model: stage_depth must list five stages");
  for (int c : encoder_channels)
    if (c < 1) throw std::invalid_argument("model: encoder channels must be >= 1");
  for (int d : stage_depth)
    if (d < 1) throw std::invalid_argument("model: stage depth must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (attention_reduction < 1)
    throw std::invalid_argument("model: attention_reduction must be >= 1");
  if (attention_spatial_kernel < 1 || attention_spatial_kernel % 2 == 0)
    throw std::invalid_argument("model: attention_spatial_kernel must be odd");
}

SegModelConfig SegModelConfig::full_scale() {
  SegModelConfig cfg;
  cfg.encoder_channels = {64, 128, 256, 512, 512};
  cfg.stage_depth = {2, 2, 3, 3, 3};
  cfg.attention_reduction = 16;
  return cfg;
}

namespace {

Tensor conv_same(const Tensor& in, const Tensor& w, const Tensor& b) {
  const int pad = (w.h - 1) / 2;
  Tensor out(in.n, w.n, in.h, in.w);
  kernels::conv2d_forward(out, in, w, b, pad);
  return out;
}

void relu_inplace(Tensor& t) {
  #pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(t.size()); ++i)
    if (t.data[i] < 0) t.data[i] = 0.0;
}

// d *= 1[out > 0]
void relu_backward_inplace(const Tensor& out, Tensor& d) {
  #pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(d.size()); ++i)
    if (out.data[i] <= 0) d.data[i] = 0.0;
}

void sigmoid_inplace(Tensor& t) {
  #pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(t.size()); ++i)
    t.data[i] = 1.0 / (1.0 + std::exp(-t.data[i]));
}

// dz = dgate * gate * (1 - gate), written into dgate
void sigmoid_backward_inplace(const Tensor& gate, Tensor& dgate) {
  for (std::size_t i = 0; i < dgate.size(); ++i)
    dgate.data[i] *= gate.data[i] * (1.0 - gate.data[i]);
}

}  // namespace

// Everything the backward pass needs from one forward run.
struct SegNet::Cache {
  Tensor x0;
  std::array<std::vector<Tensor>, 5> enc;  // per-stage post-relu conv outputs
  std::array<Tensor, 4> pooled;
  std::array<std::vector<std::int64_t>, 4> pool_arg;

  bool has_attention = false;
  Tensor ga, gm, h1, h2, s_gate;      // channel branch
  std::vector<std::int64_t> gmp_arg;  // flat index into the bottleneck
  Tensor pa, pm, cat, q_gate;         // position branch
  std::vector<int> cmax_arg;          // winning channel per (n, y, x)

  std::array<Tensor, 5> dec;  // dec[0] @1/16 ... dec[4] @1/1
  std::array<Tensor, 4> up;   // up[i] feeds dec[i+1]
};

SegNet::SegNet(const SegModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto add_conv = [&](const std::string& name, int cin, int cout, int k) {
    Param w{name + ".weight", Tensor(cout, cin, k, k), Tensor(cout, cin, k, k)};
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (double& v : w.value.data) v = std * normal(rng);
    Param b{name + ".bias", Tensor(1, cout, 1, 1), Tensor(1, cout, 1, 1)};
    index_[w.name] = static_cast<int>(params_.size());
    params_.push_back(std::move(w));
    index_[b.name] = static_cast<int>(params_.size());
    params_.push_back(std::move(b));
  };

  const auto& ch = cfg_.encoder_channels;
  for (int s = 0; s < 5; ++s) {
    int cin = s == 0 ? 3 : ch[s - 1];
    for (int d = 0; d < cfg_.stage_depth[s]; ++d) {
      add_conv("enc" + std::to_string(s + 1) + ".conv" + std::to_string(d), cin, ch[s], 3);
      cin = ch[s];
    }
  }
  if (cfg_.attention) {
    const int c5 = ch[4];
    const int hid = std::max(1, c5 / cfg_.attention_reduction);
    add_conv("att.cam.fc1", c5, hid, 1);
    add_conv("att.cam.fc2", hid, c5, 1);
    add_conv("att.pam.conv", 2, 1, cfg_.attention_spatial_kernel);
  }
  // decoder level at scale 1/(2^(4-i)) takes dec[i-1] channels to ch[4-i]
  const int dec_scales[4] = {8, 4, 2, 1};
  for (int i = 1; i <= 4; ++i) {
    const std::string name = "dec" + std::to_string(dec_scales[i - 1]);
    add_conv(name + ".upconv", i == 1 ? ch[4] : ch[5 - i], ch[4 - i], 3);
    add_conv(name + ".lateral", ch[4 - i], ch[4 - i], 1);
  }
  const int head_scales[5] = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i)
    add_conv("head" + std::to_string(head_scales[i]), i == 0 ? ch[4] : ch[4 - i],
             cfg_.num_classes, 1);
}

SegNet::~SegNet() = default;
SegNet::SegNet(SegNet&&) noexcept = default;
SegNet& SegNet::operator=(SegNet&&) noexcept = default;

int SegNet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("SegNet: no parameter " + name);
  return it->second;
}

Param& SegNet::param(const std::string& name) { return params_[find(name)]; }

void SegNet::zero_grad() {
  for (Param& p : params_) p.grad.fill(0.0);
}

namespace {

Tensor global_avg_pool(const Tensor& x) {
  Tensor out(x.n, x.c, 1, 1);
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const double* p = x.chan(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
      out.at(n, c, 0, 0) = s / static_cast<double>(x.plane());
    }
  }
  return out;
}

Tensor global_max_pool(const Tensor& x, std::vector<std::int64_t>& argmax) {
  Tensor out(x.n, x.c, 1, 1);
  argmax.assign(static_cast<std::size_t>(x.n) * x.c, 0);
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const double* p = x.chan(n, c);
      std::size_t best = 0;
      for (std::size_t i = 1; i < x.plane(); ++i)
        if (p[i] > p[best]) best = i;
      out.at(n, c, 0, 0) = p[best];
      argmax[static_cast<std::size_t>(n) * x.c + c] =
          static_cast<std::int64_t>((static_cast<std::size_t>(n) * x.c + c) * x.plane() + best);
    }
  }
  return out;
}

Tensor channel_mean(const Tensor& x) {
  Tensor out(x.n, 1, x.h, x.w);
  for (int n = 0; n < x.n; ++n) {
    double* op = out.chan(n, 0);
    for (std::size_t i = 0; i < x.plane(); ++i) {
      double s = 0.0;
      for (int c = 0; c < x.c; ++c) s += x.chan(n, c)[i];
      op[i] = s / x.c;
    }
  }
  return out;
}

Tensor channel_max(const Tensor& x, std::vector<int>& argmax) {
  Tensor out(x.n, 1, x.h, x.w);
  argmax.assign(static_cast<std::size_t>(x.n) * x.plane(), 0);
  for (int n = 0; n < x.n; ++n) {
    double* op = out.chan(n, 0);
    for (std::size_t i = 0; i < x.plane(); ++i) {
      int best = 0;
      double bv = x.chan(n, 0)[i];
      for (int c = 1; c < x.c; ++c) {
        if (x.chan(n, c)[i] > bv) {
          bv = x.chan(n, c)[i];
          best = c;
        }
      }
      op[i] = bv;
      argmax[static_cast<std::size_t>(n) * x.plane() + i] = best;
    }
  }
  return out;
}

Tensor concat2(const Tensor& a, const Tensor& b) {
  Tensor out(a.n, 2, a.h, a.w);
  for (int n = 0; n < a.n; ++n) {
    std::copy_n(a.chan(n, 0), a.plane(), out.chan(n, 0));
    std::copy_n(b.chan(n, 0), b.plane(), out.chan(n, 1));
  }
  return out;
}

}  // namespace

PredictionPyramid SegNet::run_forward(const Tensor& images, Cache* cache,
                                      bool full_pyramid) const {
  if (images.c != 3) throw std::invalid_argument("forward: expected 3-channel input");
  if (images.h % 16 || images.w % 16)
    throw std::invalid_argument("forward: H and W must be divisible by 16, got " +
                                std::to_string(images.h) + "x" + std::to_string(images.w));

  Cache local;
  Cache& cc = cache ? *cache : local;
  cc = Cache{};
  cc.has_attention = cfg_.attention;

  cc.x0 = images;
  for (double& v : cc.x0.data) v /= 255.0;

  const Tensor* stage_in = &cc.x0;
  for (int s = 0; s < 5; ++s) {
    const Tensor* in = stage_in;
    cc.enc[s].clear();
    for (int d = 0; d < cfg_.stage_depth[s]; ++d) {
      const std::string base = "enc" + std::to_string(s + 1) + ".conv" + std::to_string(d);
      Tensor out = conv_same(*in, params_[find(base + ".weight")].value,
                             params_[find(base + ".bias")].value);
      relu_inplace(out);
      cc.enc[s].push_back(std::move(out));
      in = &cc.enc[s].back();
    }
    if (s < 4) {
      const Tensor& e = cc.enc[s].back();
      cc.pooled[s] = Tensor(e.n, e.c, e.h / 2, e.w / 2);
      kernels::maxpool2_forward(cc.pooled[s], cc.pool_arg[s], e);
      stage_in = &cc.pooled[s];
    }
  }

  // bottleneck attention
  const Tensor& e5 = cc.enc[4].back();
  if (cfg_.attention) {
    cc.dec[0] = attention_forward(e5, cc);
  } else {
    cc.dec[0] = e5;
  }

  for (int i = 1; i <= 4; ++i) {
    const Tensor& prev = cc.dec[i - 1];
    cc.up[i - 1] = Tensor(prev.n, prev.c, prev.h * 2, prev.w * 2);
    kernels::resize_bilinear_forward(cc.up[i - 1], prev);
    const int dec_scales[4] = {8, 4, 2, 1};
    const std::string name = "dec" + std::to_string(dec_scales[i - 1]);
    Tensor m = conv_same(cc.up[i - 1], params_[find(name + ".upconv.weight")].value,
                         params_[find(name + ".upconv.bias")].value);
    Tensor lat = conv_same(cc.enc[4 - i].back(),
                           params_[find(name + ".lateral.weight")].value,
                           params_[find(name + ".lateral.bias")].value);
    axpy(m, lat);
    relu_inplace(m);
    cc.dec[i] = std::move(m);
  }

  PredictionPyramid pyr;
  const int head_scales[5] = {16, 8, 4, 2, 1};
  for (int i = 0; i < 5; ++i) {
    if (!full_pyramid && i != 4) continue;
    const std::string name = "head" + std::to_string(head_scales[i]);
    pyr.maps[i] = conv_same(cc.dec[i], params_[find(name + ".weight")].value,
                            params_[find(name + ".bias")].value);
  }
  return pyr;
}

PredictionPyramid SegNet::forward_train(const Tensor& images) {
  if (!cache_) cache_ = std::make_unique<Cache>();
  return run_forward(images, cache_.get(), true);
}

Tensor SegNet::forward_infer(const Tensor& images) const {
  PredictionPyramid pyr = run_forward(images, nullptr, false);
  return std::move(pyr.maps[4]);
}

// Shared by the training path (persistent cache) and attention_fuse (scratch).
Tensor SegNet::attention_forward(const Tensor& x, Cache& cc) const {
  cc.ga = global_avg_pool(x);
  cc.gm = global_max_pool(x, cc.gmp_arg);
  cc.h1 = conv_same(cc.ga, params_[find("att.cam.fc1.weight")].value,
                    params_[find("att.cam.fc1.bias")].value);
  relu_inplace(cc.h1);
  cc.h2 = conv_same(cc.gm, params_[find("att.cam.fc1.weight")].value,
                    params_[find("att.cam.fc1.bias")].value);
  relu_inplace(cc.h2);
  Tensor z = conv_same(cc.h1, params_[find("att.cam.fc2.weight")].value,
                       params_[find("att.cam.fc2.bias")].value);
  Tensor z2 = conv_same(cc.h2, params_[find("att.cam.fc2.weight")].value,
                        params_[find("att.cam.fc2.bias")].value);
  axpy(z, z2);
  sigmoid_inplace(z);
  cc.s_gate = std::move(z);

  cc.pa = channel_mean(x);
  cc.pm = channel_max(x, cc.cmax_arg);
  cc.cat = concat2(cc.pa, cc.pm);
  Tensor q = conv_same(cc.cat, params_[find("att.pam.conv.weight")].value,
                       params_[find("att.pam.conv.bias")].value);
  sigmoid_inplace(q);
  cc.q_gate = std::move(q);

  Tensor fused = Tensor::zeros_like(x);
  for (int n = 0; n < x.n; ++n) {
    const double* qp = cc.q_gate.chan(n, 0);
    for (int c = 0; c < x.c; ++c) {
      const double sg = cc.s_gate.at(n, c, 0, 0);
      const double* xp = x.chan(n, c);
      double* fp = fused.chan(n, c);
      for (std::size_t i = 0; i < x.plane(); ++i) fp[i] = sg * xp[i] + qp[i] * xp[i];
    }
  }
  return fused;
}

Tensor SegNet::attention_fuse(const Tensor& bottleneck) const {
  if (!cfg_.attention)
    throw std::logic_error("attention_fuse: attention disabled in this config");
  if (bottleneck.c != cfg_.encoder_channels[4])
    throw std::invalid_argument("attention_fuse: channel count must match the bottleneck");
  Cache scratch;
  return attention_forward(bottleneck, scratch);
}

namespace {

// dweight/dbias accumulate; din (optional) is overwritten.
void conv_backward(Param& w, Param& b, const Tensor& in, const Tensor& dout,
                   Tensor* din) {
  const int pad = (w.value.h - 1) / 2;
  Tensor dw = Tensor::zeros_like(w.value);
  Tensor db = Tensor::zeros_like(b.value);
  kernels::conv2d_backward_params(dw, db, in, dout, pad);
  axpy(w.grad, dw);
  axpy(b.grad, db);
  if (din) {
    *din = Tensor(in.n, in.c, in.h, in.w);
    kernels::conv2d_backward_input(*din, dout, w.value, pad);
  }
}

}  // namespace

void SegNet::backward(const std::array<Tensor, 5>& dmaps) {
  if (!cache_) throw std::logic_error("backward: call forward_train first");
  Cache& cc = *cache_;
  zero_grad();

  const int head_scales[5] = {16, 8, 4, 2, 1};
  const int dec_scales[4] = {8, 4, 2, 1};

  // heads
  std::array<Tensor, 5> ddec;
  for (int i = 0; i < 5; ++i) {
    const std::string name = "head" + std::to_string(head_scales[i]);
    Tensor d;
    conv_backward(params_[find(name + ".weight")], params_[find(name + ".bias")],
                  cc.dec[i], dmaps[i], &d);
    ddec[i] = std::move(d);
  }

  // decoder, top (1/1) down to the attention output
  std::array<Tensor, 4> de_lat;  // gradients into enc stage outputs 0..3
  for (int i = 4; i >= 1; --i) {
    Tensor dm = std::move(ddec[i]);
    relu_backward_inplace(cc.dec[i], dm);
    const std::string name = "dec" + std::to_string(dec_scales[i - 1]);
    Tensor dlat_in;
    conv_backward(params_[find(name + ".lateral.weight")],
                  params_[find(name + ".lateral.bias")], cc.enc[4 - i].back(), dm,
                  &dlat_in);
    de_lat[4 - i] = std::move(dlat_in);
    Tensor dup;
    conv_backward(params_[find(name + ".upconv.weight")],
                  params_[find(name + ".upconv.bias")], cc.up[i - 1], dm, &dup);
    Tensor dprev = Tensor::zeros_like(cc.dec[i - 1]);
    kernels::resize_bilinear_backward(dprev, dup);
    axpy(ddec[i - 1], dprev);
  }

  // attention (or pass-through when disabled)
  const Tensor& e5 = cc.enc[4].back();
  Tensor de5;
  if (cc.has_attention) {
    const Tensor& dout = ddec[0];
    de5 = Tensor::zeros_like(e5);
    Tensor ds(e5.n, e5.c, 1, 1);
    Tensor dq(e5.n, 1, e5.h, e5.w);
    for (int n = 0; n < e5.n; ++n) {
      double* dqp = dq.chan(n, 0);
      for (std::size_t i = 0; i < e5.plane(); ++i) dqp[i] = 0.0;
      const double* qp = cc.q_gate.chan(n, 0);
      for (int c = 0; c < e5.c; ++c) {
        const double sg = cc.s_gate.at(n, c, 0, 0);
        const double* xp = e5.chan(n, c);
        const double* dp = dout.chan(n, c);
        double* dxp = de5.chan(n, c);
        double s_acc = 0.0;
        for (std::size_t i = 0; i < e5.plane(); ++i) {
          s_acc += dp[i] * xp[i];
          dqp[i] += dp[i] * xp[i];
          dxp[i] += dp[i] * (sg + qp[i]);
        }
        ds.at(n, c, 0, 0) = s_acc;
      }
    }

    // channel branch
    sigmoid_backward_inplace(cc.s_gate, ds);
    Tensor dh1, dh2;
    conv_backward(params_[find("att.cam.fc2.weight")], params_[find("att.cam.fc2.bias")],
                  cc.h1, ds, &dh1);
    conv_backward(params_[find("att.cam.fc2.weight")], params_[find("att.cam.fc2.bias")],
                  cc.h2, ds, &dh2);
    relu_backward_inplace(cc.h1, dh1);
    relu_backward_inplace(cc.h2, dh2);
    Tensor dga, dgm;
    conv_backward(params_[find("att.cam.fc1.weight")], params_[find("att.cam.fc1.bias")],
                  cc.ga, dh1, &dga);
    conv_backward(params_[find("att.cam.fc1.weight")], params_[find("att.cam.fc1.bias")],
                  cc.gm, dh2, &dgm);
    const double inv_plane = 1.0 / static_cast<double>(e5.plane());
    for (int n = 0; n < e5.n; ++n) {
      for (int c = 0; c < e5.c; ++c) {
        const double g = dga.at(n, c, 0, 0) * inv_plane;
        double* dxp = de5.chan(n, c);
        for (std::size_t i = 0; i < e5.plane(); ++i) dxp[i] += g;
        de5.data[cc.gmp_arg[static_cast<std::size_t>(n) * e5.c + c]] +=
            dgm.at(n, c, 0, 0);
      }
    }

    // position branch
    sigmoid_backward_inplace(cc.q_gate, dq);
    Tensor dcat;
    conv_backward(params_[find("att.pam.conv.weight")], params_[find("att.pam.conv.bias")],
                  cc.cat, dq, &dcat);
    for (int n = 0; n < e5.n; ++n) {
      const double* dpa = dcat.chan(n, 0);
      const double* dpm = dcat.chan(n, 1);
      for (std::size_t i = 0; i < e5.plane(); ++i) {
        const double g = dpa[i] / e5.c;
        for (int c = 0; c < e5.c; ++c) de5.chan(n, c)[i] += g;
        const int cmax = cc.cmax_arg[static_cast<std::size_t>(n) * e5.plane() + i];
        de5.chan(n, cmax)[i] += dpm[i];
      }
    }
  } else {
    de5 = std::move(ddec[0]);
  }

  // encoder, stage 5 down to 1
  Tensor dstage = std::move(de5);
  for (int s = 4; s >= 0; --s) {
    for (int d = cfg_.stage_depth[s] - 1; d >= 0; --d) {
      relu_backward_inplace(cc.enc[s][d], dstage);
      const Tensor& in = d > 0 ? cc.enc[s][d - 1]
                               : (s > 0 ? cc.pooled[s - 1] : cc.x0);
      const std::string base =
          "enc" + std::to_string(s + 1) + ".conv" + std::to_string(d);
      Tensor din;
      conv_backward(params_[find(base + ".weight")], params_[find(base + ".bias")], in,
                    dstage, &din);
      dstage = std::move(din);
    }
    if (s > 0) {
      Tensor de = Tensor::zeros_like(cc.enc[s - 1].back());
      kernels::maxpool2_backward(de, dstage, cc.pool_arg[s - 1]);
      axpy(de, de_lat[s - 1]);
      dstage = std::move(de);
    }
  }
}

void save_checkpoint(const std::string& path, const SegNet& model,
                     const std::vector<std::pair<std::string, std::string>>& meta) {
  Archive a;
  a.meta.emplace_back("format", "checkpoint");
  for (const auto& kv : meta) a.meta.push_back(kv);
  for (const Param& p : model.params()) a.arrays.emplace_back(p.name, p.value);
  save_archive(path, a);
}

std::vector<std::pair<std::string, std::string>> load_checkpoint(const std::string& path,
                                                                 SegNet& model) {
  const Archive a = load_archive(path);
  if (a.meta_value("format") != "checkpoint")
    throw std::runtime_error("checkpoint " + path + ": meta 'format' must be checkpoint");
  for (Param& p : model.params()) {
    const Tensor* t = a.find(p.name);
    if (!t) throw std::runtime_error("checkpoint " + path + ": missing array " + p.name);
    if (!t->same_shape(p.value))
      throw std::runtime_error("checkpoint " + path + ": shape mismatch for " + p.name);
    p.value = *t;
  }
  return a.meta;
}

int load_matching_params(const std::string& path, SegNet& model) {
  const Archive a = load_archive(path);
  int taken = 0;
  for (Param& p : model.params()) {
    const Tensor* t = a.find(p.name);
    if (t && t->same_shape(p.value)) {
      p.value = *t;
      ++taken;
    }
  }
  return taken;
}

}  // namespace bsm
