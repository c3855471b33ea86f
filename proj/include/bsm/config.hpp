#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "bsm/bsm_pipeline.hpp"
#include "bsm/data_io.hpp"
#include "bsm/model.hpp"
#include "bsm/trainer.hpp"

namespace bsm {

struct DataConfig {
  std::string manifest;  // dataset index; default <root>/manifest.tsv
  std::string root;      // dataset directory for relative paths
  std::optional<SyntheticSpec> synthetic;
  std::optional<PrepareSpec> prepare;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
  std::string out_dir = "out";
  std::string aggregation = "image_mean";  // image_mean | city_mean
  std::string checkpoint;                  // defaults to the train run's final one
  std::string split = "test";

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

// One config file per experiment; the command selects the stage. Every
// default matches the reference training settings; unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  BsmConfig bsm;
  SegModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

// Canonical JSON with all defaults materialized; parse(serialize(x)) == x.
std::string serialize_config(const ExperimentConfig& cfg);

// FNV-1a hash of the canonical serialization, hex-encoded.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace bsm
