#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bsm/bsm_pipeline.hpp"
#include "bsm/image.hpp"
#include "bsm/model.hpp"
#include "bsm/trainer.hpp"

namespace bsm {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t valid_total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Exact pixel tallies over valid pixels.
ConfusionCounts confusion_counts(const BoolGrid& pred, const BoolGrid& gt,
                                 const BoolGrid& valid);

// TP / (TP + FP + FN); two empty masks count as a perfect match (1.0).
double iou(const ConfusionCounts& c);

struct ImageScore {
  std::string id, city;
  ConfusionCounts counts;
  double iou_percent = 0.0;

  friend bool operator==(const ImageScore&, const ImageScore&) = default;
};

struct CityScore {
  std::string city;
  ConfusionCounts counts;  // pooled over the city's images
  long images = 0;
  double iou_percent = 0.0;

  friend bool operator==(const CityScore&, const CityScore&) = default;
};

struct EvalReport {
  std::vector<ImageScore> images;
  std::vector<CityScore> cities;
  double miou_image_mean = 0.0;  // primary aggregation: mean of per-image IoU
  double miou_city_mean = 0.0;   // mean of per-city IoU, emitted for comparison
  std::string config_hash;
  double timing_s = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport aggregate(const std::vector<ImageScore>& images,
                     const std::string& config_hash, double timing_s);

// Batch-1 inference over the tiles; the predicted mask is the argmax class.
EvalReport evaluate_model(const SegNet& model, const std::vector<Tile>& tiles,
                          const std::string& config_hash);

// Writes <prefix>.tsv (machine-readable; parse_report inverts it exactly),
// <prefix>_table.txt (percentages to two decimals) and <prefix>_chart.png
// (per-city IoU bars).
void emit_report(const EvalReport& report, const std::string& out_prefix);
EvalReport parse_report(const std::string& tsv_path);

struct AblationRow {
  std::string name;
  std::set<Submodule> enabled;
  bool failed = false;
  std::string error;
  double miou_image_mean = 0.0;
  double miou_city_mean = 0.0;
  std::vector<std::pair<std::string, double>> city_iou;
  double wall_s = 0.0;
  std::string data_order_hash;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  friend bool operator==(const AblationTable&, const AblationTable&) = default;
};

// The eight submodule combinations, trained and evaluated under identical
// seeds, data order, and iteration budget. A failing row is recorded and the
// remaining rows continue.
AblationTable run_ablation(const std::vector<Tile>& train_tiles,
                           const std::vector<Tile>& eval_tiles,
                           const SegModelConfig& model_cfg, const BsmConfig& bsm_base,
                           const TrainConfig& train_cfg, const std::string& out_dir,
                           const std::string& config_hash);

void emit_ablation(const AblationTable& table, const std::string& out_prefix);
AblationTable parse_ablation(const std::string& tsv_path);

}  // namespace bsm
