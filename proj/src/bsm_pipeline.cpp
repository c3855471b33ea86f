#include "bsm/bsm_pipeline.hpp"

#include <sstream>
#include <stdexcept>

namespace bsm {

std::string submodule_name(Submodule s) {
  switch (s) {
    case Submodule::GA: return "GA";
    case Submodule::CA: return "CA";
    case Submodule::SM: return "SM";
  }
  return "?";
}

Submodule submodule_from_name(const std::string& name) {
  if (name == "GA") return Submodule::GA;
  if (name == "CA") return Submodule::CA;
  if (name == "SM") return Submodule::SM;
  throw std::invalid_argument("unknown submodule: " + name);
}

void BsmConfig::validate() const {
  augment.validate();
  style.validate();
  for (double p : {gate_ga, gate_ca, gate_sm})
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("bsm: gate probabilities must be in [0, 1]");
}

std::string BatchTrace::to_line(long batch_index) const {
  std::ostringstream ss;
  ss << "batch=" << batch_index << " seed=" << seed << " ga=" << (ga_fired ? 1 : 0)
     << " ca=" << (ca_fired ? 1 : 0) << " sm=" << (sm_fired ? 1 : 0);
  if (ga_fired) {
    ss << " |ga";
    for (const auto& p : geo)
      ss << " h=" << (p.hflip ? 1 : 0) << ",v=" << (p.vflip ? 1 : 0)
         << ",rot=" << p.rotation_deg << ",s=" << p.scale;
  }
  if (ca_fired) {
    ss << " |ca";
    for (const auto& p : color)
      ss << " b=" << p.brightness << ",cb=" << p.color_balance << ",ct=" << p.contrast
         << ",sh=" << p.sharpness << ",blur=" << (p.blur ? p.blur_sigma : 0.0);
  }
  if (sm_fired) {
    ss << " |sm perm=";
    for (std::size_t i = 0; i < perm.size(); ++i) ss << (i ? "," : "") << perm[i];
  }
  return ss.str();
}

BsmPipeline::BsmPipeline(const BsmConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.enabled.count(Submodule::SM)) transform_ = make_transform(cfg_.style);
}

namespace {
bool gate_fires(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}
}  // namespace

SampleBatch BsmPipeline::apply(const SampleBatch& batch, Rng& rng,
                               BatchTrace* trace) const {
  if (batch.size() == 0) throw std::invalid_argument("bsm_apply: empty batch");
  BatchTrace local;
  BatchTrace& t = trace ? *trace : local;

  SampleBatch out = batch;
  if (cfg_.enabled.count(Submodule::GA)) {
    t.ga_fired = gate_fires(rng, cfg_.gate_ga);
    if (t.ga_fired) out = apply_geometric(out, cfg_.augment, rng, &t.geo);
  }
  if (cfg_.enabled.count(Submodule::CA)) {
    t.ca_fired = gate_fires(rng, cfg_.gate_ca);
    if (t.ca_fired) out = apply_color(out, cfg_.augment, rng, &t.color);
  }
  if (cfg_.enabled.count(Submodule::SM)) {
    t.sm_fired = gate_fires(rng, cfg_.gate_sm);
    if (t.sm_fired) out = style_mix_batch(out, cfg_.style, *transform_, rng, &t.perm);
  }
  return out;
}

SampleBatch bsm_apply(const SampleBatch& batch, const BsmConfig& cfg, Rng& rng,
                      BatchTrace* trace) {
  return BsmPipeline(cfg).apply(batch, rng, trace);
}

}  // namespace bsm
