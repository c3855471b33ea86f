#include "bsm/style_mix.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "bsm/archive.hpp"
#include "bsm/kernels.hpp"

namespace bsm {

void StyleMixConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("style mix: alpha must be in [0, 1]");
  if (!(epsilon > 0.0)) throw std::invalid_argument("style mix: epsilon must be > 0");
  if (transform != "pixel" && transform != "conv")
    throw std::invalid_argument("style mix: transform must be pixel or conv");
  if (transform == "conv" && weights_path.empty())
    throw std::invalid_argument("style mix: conv transform requires weights_path");
}

ChannelStats channel_stats(const Tensor& f) {
  ChannelStats s;
  s.n = f.n;
  s.c = f.c;
  kernels::channel_moments(f, s.mean, s.stddev);
  return s;
}

Tensor adain(const Tensor& f_c, const Tensor& f_s, double eps) {
  if (f_c.n != f_s.n || f_c.c != f_s.c)
    throw std::invalid_argument("adain: batch/channel mismatch");
  const ChannelStats sc = channel_stats(f_c);
  const ChannelStats ss = channel_stats(f_s);
  Tensor out = Tensor::zeros_like(f_c);
  const int planes = f_c.n * f_c.c;
  #pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int n = p / f_c.c, c = p % f_c.c;
    const double mu_c = sc.mean_at(n, c), sd_c = sc.std_at(n, c);
    const double mu_s = ss.mean_at(n, c), sd_s = ss.std_at(n, c);
    const double gain = sd_s / (sd_c + eps);
    const double* ip = f_c.chan(n, c);
    double* op = out.chan(n, c);
    for (std::size_t k = 0; k < f_c.plane(); ++k)
      op[k] = gain * (ip[k] - mu_c) + mu_s;
  }
  return out;
}

Tensor mix_interpolate(const Tensor& f_cs, const Tensor& f_c, double alpha) {
  if (!f_cs.same_shape(f_c))
    throw std::invalid_argument("mix_interpolate: shape mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("mix_interpolate: alpha must be in [0, 1]");
  if (alpha == 0.0) return f_c;
  if (alpha == 1.0) return f_cs;
  Tensor out = Tensor::zeros_like(f_c);
  const std::size_t n = out.size();
  #pragma omp parallel for schedule(static)
  for (long k = 0; k < static_cast<long>(n); ++k)
    out.data[k] = alpha * f_cs.data[k] + (1.0 - alpha) * f_c.data[k];
  return out;
}

std::vector<int> shuffle_batch(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("shuffle_batch: need at least one sample");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

std::vector<ConvTransform::Layer> ConvTransform::parse_layers(const Archive& a,
                                                              const std::string& prefix,
                                                              const std::string& path) {
  std::vector<Layer> layers;
  for (int idx = 0;; ++idx) {
    const std::string key = prefix + ".layer." + std::to_string(idx);
    if (!a.has_meta(key)) break;
    const std::string desc = a.meta_value(key);
    std::istringstream ss(desc);
    std::string kind;
    ss >> kind;
    Layer layer;
    if (kind == "conv") {
      int cin, cout, k, pad;
      std::string act;
      if (!(ss >> cin >> cout >> k >> pad >> act))
        throw std::runtime_error("style weights " + path + ": malformed layer '" +
                                 key + " " + desc + "'");
      layer.kind = Layer::Kind::Conv;
      layer.pad = pad;
      layer.relu = act == "relu";
      if (!layer.relu && act != "linear")
        throw std::runtime_error("style weights " + path + ": unknown activation " + act);
      const Tensor* wt = a.find(key + ".weight");
      const Tensor* bt = a.find(key + ".bias");
      if (!wt || !bt)
        throw std::runtime_error("style weights " + path + ": missing arrays for " + key);
      if (wt->n != cout || wt->c != cin || wt->h != k || wt->w != k)
        throw std::runtime_error("style weights " + path + ": array shape disagrees with '" +
                                 desc + "' for " + key);
      if (bt->c != cout)
        throw std::runtime_error("style weights " + path + ": bad bias shape for " + key);
      layer.weight = *wt;
      layer.bias = *bt;
    } else if (kind == "pool2") {
      layer.kind = Layer::Kind::Pool2;
    } else if (kind == "up2") {
      layer.kind = Layer::Kind::Up2;
    } else {
      throw std::runtime_error("style weights " + path + ": unknown layer kind " + kind);
    }
    layers.push_back(std::move(layer));
  }
  if (layers.empty())
    throw std::runtime_error("style weights " + path + ": no '" + prefix + "' layers");
  return layers;
}

ConvTransform::ConvTransform(const std::string& archive_path) {
  const Archive a = load_archive(archive_path);
  if (a.meta_value("format") != "style-transform")
    throw std::runtime_error("style weights " + archive_path +
                             ": meta 'format' must be style-transform");
  encoder_ = parse_layers(a, "enc", archive_path);
  decoder_ = parse_layers(a, "dec", archive_path);
}

Tensor ConvTransform::run(const std::vector<Layer>& layers, Tensor x) {
  for (const Layer& l : layers) {
    switch (l.kind) {
      case Layer::Kind::Conv: {
        Tensor out(x.n, l.weight.n, x.h - l.weight.h + 1 + 2 * l.pad,
                   x.w - l.weight.w + 1 + 2 * l.pad);
        kernels::conv2d_forward(out, x, l.weight, l.bias, l.pad);
        if (l.relu)
          for (double& v : out.data) v = v > 0 ? v : 0.0;
        x = std::move(out);
        break;
      }
      case Layer::Kind::Pool2: {
        Tensor out(x.n, x.c, x.h / 2, x.w / 2);
        std::vector<std::int64_t> argmax;
        kernels::maxpool2_forward(out, argmax, x);
        x = std::move(out);
        break;
      }
      case Layer::Kind::Up2: {
        Tensor out(x.n, x.c, x.h * 2, x.w * 2);
        for (int n = 0; n < x.n; ++n)
          for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < out.h; ++y)
              for (int xx = 0; xx < out.w; ++xx)
                out.at(n, c, y, xx) = x.at(n, c, y / 2, xx / 2);
        x = std::move(out);
        break;
      }
    }
  }
  return x;
}

Tensor ConvTransform::encode(const Tensor& images) const {
  Tensor x = images;
  for (double& v : x.data) v /= 255.0;
  return run(encoder_, std::move(x));
}

Tensor ConvTransform::decode(const Tensor& features) const {
  Tensor x = run(decoder_, features);
  for (double& v : x.data) v *= 255.0;
  return x;
}

std::unique_ptr<FeatureTransform> make_transform(const StyleMixConfig& cfg) {
  cfg.validate();
  if (cfg.transform == "pixel") return std::make_unique<PixelSpaceTransform>();
  return std::make_unique<ConvTransform>(cfg.weights_path);
}

SampleBatch style_mix_batch_with_perm(const SampleBatch& content,
                                      const StyleMixConfig& cfg,
                                      const FeatureTransform& transform,
                                      const std::vector<int>& perm) {
  cfg.validate();
  if (content.size() < 1)
    throw std::invalid_argument("style_mix_batch: empty batch");
  if (static_cast<int>(perm.size()) != content.size())
    throw std::invalid_argument("style_mix_batch: permutation size mismatch");

  const Tensor f_c = transform.encode(content.images);
  // encode is per-sample, so encoding the permuted batch equals permuting the
  // encoded features
  Tensor f_s = Tensor::zeros_like(f_c);
  for (int i = 0; i < f_c.n; ++i) {
    const int j = perm[i];
    if (j < 0 || j >= f_c.n)
      throw std::invalid_argument("style_mix_batch: permutation index out of range");
    std::copy_n(f_c.chan(j, 0), f_c.plane() * f_c.c, f_s.chan(i, 0));
  }
  const Tensor f_cs = adain(f_c, f_s, cfg.epsilon);
  const Tensor f_ccs = mix_interpolate(f_cs, f_c, cfg.alpha);

  SampleBatch out = content;
  out.images = transform.decode(f_ccs);
  for (double& v : out.images.data) v = std::clamp(v, 0.0, 255.0);
  return out;
}

SampleBatch style_mix_batch(const SampleBatch& content, const StyleMixConfig& cfg,
                            const FeatureTransform& transform, Rng& rng,
                            std::vector<int>* perm_out) {
  const std::vector<int> perm = shuffle_batch(content.size(), rng);
  if (perm_out) *perm_out = perm;
  return style_mix_batch_with_perm(content, cfg, transform, perm);
}

}  // namespace bsm
