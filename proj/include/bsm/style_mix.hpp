#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bsm/image.hpp"
#include "bsm/rng.hpp"
#include "bsm/tensor.hpp"

namespace bsm {

// Per-sample per-channel first and second population moments (divide by H*W).
struct ChannelStats {
  int n = 0, c = 0;
  std::vector<double> mean;
  std::vector<double> stddev;

  double mean_at(int i, int j) const { return mean[static_cast<std::size_t>(i) * c + j]; }
  double std_at(int i, int j) const { return stddev[static_cast<std::size_t>(i) * c + j]; }
};

struct StyleMixConfig {
  double alpha = 0.5;           // degree of mixing
  double epsilon = 1e-5;        // stabilizer added to the content stddev
  std::string transform = "pixel";  // pixel | conv
  std::string weights_path;         // conv transform weight archive

  void validate() const;
  friend bool operator==(const StyleMixConfig&, const StyleMixConfig&) = default;
};

ChannelStats channel_stats(const Tensor& f);

// Re-normalizes the content features to carry the style features' channel
// statistics: sigma(f_s) * (f_c - mu(f_c)) / (sigma(f_c) + eps) + mu(f_s).
// Batch and channel counts must agree; spatial sizes may differ.
Tensor adain(const Tensor& f_c, const Tensor& f_s, double eps);

// alpha * f_cs + (1 - alpha) * f_c, elementwise; alpha 0 and 1 return exact
// copies of the respective argument.
Tensor mix_interpolate(const Tensor& f_cs, const Tensor& f_c, double alpha);

// Uniformly random pairing of content index i with style index perm[i].
// Fixed points are allowed; a sample may be styled by itself.
std::vector<int> shuffle_batch(int n, Rng& rng);

// Pluggable feature space around the mixing math.
class FeatureTransform {
 public:
  virtual ~FeatureTransform() = default;
  virtual Tensor encode(const Tensor& images) const = 0;
  virtual Tensor decode(const Tensor& features) const = 0;
};

// Identity encoder/decoder: AdaIN acts directly on the image channels.
class PixelSpaceTransform final : public FeatureTransform {
 public:
  Tensor encode(const Tensor& images) const override { return images; }
  Tensor decode(const Tensor& features) const override { return features; }
};

// Convolutional encoder/decoder with topology and weights read from a weight
// archive (layer lines in the metadata, named arrays per conv; see the README
// for the exact conventions). Forward only; weights are immutable after load
// and can be shared across workers.
class ConvTransform final : public FeatureTransform {
 public:
  explicit ConvTransform(const std::string& archive_path);
  Tensor encode(const Tensor& images) const override;
  Tensor decode(const Tensor& features) const override;

 private:
  struct Layer {
    enum class Kind { Conv, Pool2, Up2 } kind;
    Tensor weight, bias;
    int pad = 0;
    bool relu = false;
  };
  static std::vector<Layer> parse_layers(const class Archive& a, const std::string& prefix,
                                         const std::string& path);
  static Tensor run(const std::vector<Layer>& layers, Tensor x);
  std::vector<Layer> encoder_;
  std::vector<Layer> decoder_;
};

std::unique_ptr<FeatureTransform> make_transform(const StyleMixConfig& cfg);

// Full SM path: encode, pair via a batch shuffle, AdaIN, interpolate, decode,
// clamp to [0, 255]. Labels and validity pass through untouched.
SampleBatch style_mix_batch(const SampleBatch& content, const StyleMixConfig& cfg,
                            const FeatureTransform& transform, Rng& rng,
                            std::vector<int>* perm_out = nullptr);
SampleBatch style_mix_batch_with_perm(const SampleBatch& content,
                                      const StyleMixConfig& cfg,
                                      const FeatureTransform& transform,
                                      const std::vector<int>& perm);

}  // namespace bsm
