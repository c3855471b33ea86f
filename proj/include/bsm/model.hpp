#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bsm/tensor.hpp"

namespace bsm {

struct SegModelConfig {
  // Five encoder stages so the decoder can emit the five supervised scales.
  std::vector<int> encoder_channels{16, 32, 64, 128, 128};
  std::vector<int> stage_depth{1, 1, 1, 1, 1};  // convs per stage
  int num_classes = 2;
  bool attention = true;
  int attention_reduction = 4;       // channel-branch MLP bottleneck divisor
  int attention_spatial_kernel = 7;  // position-branch conv size (odd)
  std::string pretrained_weights;    // optional checkpoint for warm start

  void validate() const;
  static SegModelConfig full_scale();  // 16-layer backbone shape

  friend bool operator==(const SegModelConfig&, const SegModelConfig&) = default;
};

// Class-score maps at (1/16, 1/8, 1/4, 1/2, 1/1) of the input, in that order.
struct PredictionPyramid {
  std::array<Tensor, 5> maps;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Building-extraction network: convolutional encoder, parallel channel and
// position attention at the bottleneck (sum-fused), lateral-skip decoder with
// per-scale 1x1 heads. Training mode emits all five scales; inference runs
// only the path to the full-resolution map.
class SegNet {
 public:
  SegNet(const SegModelConfig& cfg, std::uint64_t init_seed);
  ~SegNet();
  SegNet(SegNet&&) noexcept;
  SegNet& operator=(SegNet&&) noexcept;

  // Input: N x 3 x H x W intensities in [0, 255]; H and W divisible by 16.
  PredictionPyramid forward_train(const Tensor& images);
  Tensor forward_infer(const Tensor& images) const;

  // Backpropagates the given per-scale score gradients through the cached
  // forward pass, filling every parameter's grad.
  void backward(const std::array<Tensor, 5>& dmaps);

  // Channel + position attention branches computed in parallel from the same
  // input and fused by elementwise sum. Exposed for direct testing.
  Tensor attention_fuse(const Tensor& bottleneck) const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& param(const std::string& name);
  void zero_grad();

  const SegModelConfig& config() const { return cfg_; }

 private:
  struct Cache;
  PredictionPyramid run_forward(const Tensor& images, Cache* cache, bool full_pyramid) const;
  Tensor attention_forward(const Tensor& x, Cache& cc) const;

  SegModelConfig cfg_;
  std::vector<Param> params_;
  std::map<std::string, int> index_;
  std::unique_ptr<Cache> cache_;

  int find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const SegNet& model,
                     const std::vector<std::pair<std::string, std::string>>& meta);
// Strict load: every parameter must be present with a matching shape.
// Returns the checkpoint metadata.
std::vector<std::pair<std::string, std::string>> load_checkpoint(const std::string& path,
                                                                 SegNet& model);
// Lenient load for pretrained backbones: copies arrays whose name and shape
// match, returns how many were taken.
int load_matching_params(const std::string& path, SegNet& model);

}  // namespace bsm
