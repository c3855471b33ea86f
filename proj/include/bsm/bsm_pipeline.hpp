#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "bsm/augment.hpp"
#include "bsm/style_mix.hpp"

namespace bsm {

enum class Submodule { GA, CA, SM };

std::string submodule_name(Submodule s);
Submodule submodule_from_name(const std::string& name);

struct BsmConfig {
  AugmentationConfig augment;
  StyleMixConfig style;
  double gate_ga = 0.5;
  double gate_ca = 0.5;
  double gate_sm = 0.5;
  // Ablations disable submodules entirely; an enabled one still flips its
  // own Bernoulli gate every batch.
  std::set<Submodule> enabled{Submodule::GA, Submodule::CA, Submodule::SM};

  void validate() const;
  friend bool operator==(const BsmConfig&, const BsmConfig&) = default;
};

// What one bsm_apply call drew, for the augmentation trace and for replaying
// the geometric transform on labels alone.
struct BatchTrace {
  std::uint64_t seed = 0;
  bool ga_fired = false, ca_fired = false, sm_fired = false;
  std::vector<GeoParams> geo;
  std::vector<ColorParams> color;
  std::vector<int> perm;

  std::string to_line(long batch_index) const;
};

// Owns the (possibly weight-backed) style transform so ablation rows and
// training loops do not reload it per batch.
class BsmPipeline {
 public:
  explicit BsmPipeline(const BsmConfig& cfg);

  // Submodules run in the fixed order GA, CA, SM; each enabled one executes
  // iff its gate fires. Labels change only through GA's geometry; CA and SM
  // leave them bitwise untouched.
  SampleBatch apply(const SampleBatch& batch, Rng& rng, BatchTrace* trace = nullptr) const;

  const BsmConfig& config() const { return cfg_; }
  const FeatureTransform& transform() const { return *transform_; }

 private:
  BsmConfig cfg_;
  std::unique_ptr<FeatureTransform> transform_;
};

// One-shot convenience wrapper around BsmPipeline::apply.
SampleBatch bsm_apply(const SampleBatch& batch, const BsmConfig& cfg, Rng& rng,
                      BatchTrace* trace = nullptr);

}  // namespace bsm
