#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bsm/bsm_pipeline.hpp"
#include "bsm/image.hpp"
#include "bsm/model.hpp"

namespace bsm {

// N x H x W class indices in [0, C).
struct LabelBatch {
  int n = 0, h = 0, w = 0;
  std::vector<std::int32_t> v;

  LabelBatch() = default;
  LabelBatch(int n_, int h_, int w_)
      : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * h_ * w_, 0) {}
  std::int32_t& at(int i, int y, int x) {
    return v[(static_cast<std::size_t>(i) * h + y) * w + x];
  }
  std::int32_t at(int i, int y, int x) const {
    return v[(static_cast<std::size_t>(i) * h + y) * w + x];
  }
};

LabelBatch labels_from_masks(const BoolBatch& masks);
LabelBatch downsample_nearest(const LabelBatch& labels, int factor);
BoolBatch downsample_nearest(const BoolBatch& flags, int factor);

// Mean over valid pixels of -log softmax(scores)[label]; zero when nothing is
// valid. Optionally writes d(loss)/d(scores).
double pixel_ce_loss(const Tensor& scores, const LabelBatch& labels,
                     const BoolBatch& valid, Tensor* dscores = nullptr);

double combine_scale_losses(const std::array<double, 5>& per_scale,
                            const std::array<double, 5>& weights);

struct MultiscaleLoss {
  double total = 0.0;
  std::array<double, 5> per_scale{};
};

// Labels and validity are nearest-downsampled to each scale; the per-scale
// cross-entropies combine with the configured weights.
MultiscaleLoss multiscale_loss(const PredictionPyramid& pyramid,
                               const LabelBatch& labels, const BoolBatch& valid,
                               const std::array<double, 5>& weights,
                               std::array<Tensor, 5>* dmaps = nullptr);

// base_lr * (1 - iteration/total)^power
double poly_lr(double base_lr, long iteration, long total_iterations,
               double power = 0.9);

struct TrainConfig {
  double base_lr = 1e-4;
  double weight_decay = 5e-5;
  double poly_power = 0.9;
  int batch_size = 16;
  long total_iterations = -1;  // must be set per experiment
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0 = final checkpoint only
  std::array<double, 5> loss_weights{0.25, 0.25, 0.25, 0.25, 0.5};

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<double> losses;
  std::string data_order_hash;  // FNV-1a over the drawn sample indices
  bool aborted = false;
  std::string abort_reason;
};

// One iteration = draw batch, BSM, forward, multi-scale loss, Adam step with
// decoupled weight decay under the poly schedule. Logs
// `iteration<TAB>loss<TAB>lr` per step and checkpoints at the cadence.
// A non-finite loss aborts, keeping the last good parameters on disk.
TrainResult train(SegNet& model, const std::vector<Tile>& train_tiles,
                  const BsmConfig& bsm_cfg, const TrainConfig& tc,
                  const std::string& out_dir, const std::string& config_hash,
                  bool trace_enabled = false);

}  // namespace bsm
