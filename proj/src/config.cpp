#include "bsm/config.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace bsm {

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& what) {
  throw std::runtime_error("config " + origin + ": " + what);
}

void expect_object(const json& j, const std::string& origin, const std::string& path) {
  if (!j.is_object()) fail(origin, path + " must be an object");
}

void reject_unknown(const json& j, const std::string& origin, const std::string& path,
                    const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      fail(origin, "unknown key '" + (path.empty() ? key : path + "." + key) + "'");
}

template <typename T>
void take(const json& j, const std::string& origin, const std::string& path,
          const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    fail(origin, "bad value for '" + path + "." + key + "': " + e.what());
  }
}

void take_range(const json& j, const std::string& origin, const std::string& path,
                const char* key, std::array<double, 2>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2)
    fail(origin, "'" + path + "." + key + "' must be [lo, hi]");
  out[0] = v[0].get<double>();
  out[1] = v[1].get<double>();
}

void parse_style_params(const json& j, const std::string& origin,
                        const std::string& path, StyleParams& out) {
  expect_object(j, origin, path);
  reject_unknown(j, origin, path, {"name", "bias", "gain", "noise_sigma"});
  take(j, origin, path, "name", out.name);
  take(j, origin, path, "noise_sigma", out.noise_sigma);
  for (const char* key : {"bias", "gain"}) {
    if (!j.contains(key)) continue;
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 3)
      fail(origin, "'" + path + "." + key + "' must list three channel values");
    auto& dst = std::string(key) == "bias" ? out.bias : out.gain;
    for (int c = 0; c < 3; ++c) dst[c] = v[c].get<double>();
  }
}

json style_params_to_json(const StyleParams& p) {
  json j;
  j["name"] = p.name;
  j["bias"] = p.bias;
  j["gain"] = p.gain;
  j["noise_sigma"] = p.noise_sigma;
  return j;
}

ExperimentConfig parse_json(const json& root, const std::string& origin) {
  expect_object(root, origin, "(top level)");
  reject_unknown(root, origin, "", {"seed", "data", "bsm", "model", "train", "eval"});

  ExperimentConfig cfg;
  take(root, origin, "", "seed", cfg.seed);

  if (root.contains("data")) {
    const json& d = root.at("data");
    expect_object(d, origin, "data");
    reject_unknown(d, origin, "data", {"manifest", "root", "synthetic", "prepare"});
    take(d, origin, "data", "manifest", cfg.data.manifest);
    take(d, origin, "data", "root", cfg.data.root);
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      expect_object(s, origin, "data.synthetic");
      reject_unknown(s, origin, "data.synthetic",
                     {"tiles_per_style", "tile_size", "buildings_min", "buildings_max",
                      "building_size_min", "building_size_max", "style_a", "style_b",
                      "seed"});
      SyntheticSpec spec;
      spec.seed = cfg.seed;
      take(s, origin, "data.synthetic", "tiles_per_style", spec.tiles_per_style);
      take(s, origin, "data.synthetic", "tile_size", spec.tile_size);
      take(s, origin, "data.synthetic", "buildings_min", spec.buildings_min);
      take(s, origin, "data.synthetic", "buildings_max", spec.buildings_max);
      take(s, origin, "data.synthetic", "building_size_min", spec.building_size_min);
      take(s, origin, "data.synthetic", "building_size_max", spec.building_size_max);
      take(s, origin, "data.synthetic", "seed", spec.seed);
      if (s.contains("style_a"))
        parse_style_params(s.at("style_a"), origin, "data.synthetic.style_a", spec.style_a);
      if (s.contains("style_b"))
        parse_style_params(s.at("style_b"), origin, "data.synthetic.style_b", spec.style_b);
      cfg.data.synthetic = spec;
    }
    if (d.contains("prepare")) {
      const json& p = d.at("prepare");
      expect_object(p, origin, "data.prepare");
      reject_unknown(p, origin, "data.prepare",
                     {"source_list", "tile_size", "filter_background", "split_ratio",
                      "explicit_train_count", "image_format"});
      PrepareSpec spec;
      take(p, origin, "data.prepare", "source_list", spec.source_list);
      take(p, origin, "data.prepare", "tile_size", spec.tile_size);
      take(p, origin, "data.prepare", "filter_background", spec.filter_background);
      take(p, origin, "data.prepare", "split_ratio", spec.split_ratio);
      take(p, origin, "data.prepare", "explicit_train_count", spec.explicit_train_count);
      take(p, origin, "data.prepare", "image_format", spec.image_format);
      cfg.data.prepare = spec;
    }
  }

  if (root.contains("bsm")) {
    const json& b = root.at("bsm");
    expect_object(b, origin, "bsm");
    reject_unknown(b, origin, "bsm",
                   {"gate_ga", "gate_ca", "gate_sm", "enabled", "augment", "style"});
    take(b, origin, "bsm", "gate_ga", cfg.bsm.gate_ga);
    take(b, origin, "bsm", "gate_ca", cfg.bsm.gate_ca);
    take(b, origin, "bsm", "gate_sm", cfg.bsm.gate_sm);
    if (b.contains("enabled")) {
      const json& e = b.at("enabled");
      if (!e.is_array()) fail(origin, "'bsm.enabled' must be a list of submodules");
      cfg.bsm.enabled.clear();
      for (const json& v : e) {
        try {
          cfg.bsm.enabled.insert(submodule_from_name(v.get<std::string>()));
        } catch (const std::exception& ex) {
          fail(origin, std::string("'bsm.enabled': ") + ex.what());
        }
      }
    }
    if (b.contains("augment")) {
      const json& a = b.at("augment");
      expect_object(a, origin, "bsm.augment");
      reject_unknown(a, origin, "bsm.augment",
                     {"per_op_probability", "rotation_bound_deg", "scale_range",
                      "brightness_range", "color_balance_range", "contrast_range",
                      "sharpness_range", "blur_sigma_range"});
      auto& ac = cfg.bsm.augment;
      take(a, origin, "bsm.augment", "per_op_probability", ac.per_op_probability);
      take(a, origin, "bsm.augment", "rotation_bound_deg", ac.rotation_bound_deg);
      take_range(a, origin, "bsm.augment", "scale_range", ac.scale_range);
      take_range(a, origin, "bsm.augment", "brightness_range", ac.brightness_range);
      take_range(a, origin, "bsm.augment", "color_balance_range", ac.color_balance_range);
      take_range(a, origin, "bsm.augment", "contrast_range", ac.contrast_range);
      take_range(a, origin, "bsm.augment", "sharpness_range", ac.sharpness_range);
      take_range(a, origin, "bsm.augment", "blur_sigma_range", ac.blur_sigma_range);
    }
    if (b.contains("style")) {
      const json& s = b.at("style");
      expect_object(s, origin, "bsm.style");
      reject_unknown(s, origin, "bsm.style",
                     {"alpha", "epsilon", "transform", "weights_path"});
      take(s, origin, "bsm.style", "alpha", cfg.bsm.style.alpha);
      take(s, origin, "bsm.style", "epsilon", cfg.bsm.style.epsilon);
      take(s, origin, "bsm.style", "transform", cfg.bsm.style.transform);
      take(s, origin, "bsm.style", "weights_path", cfg.bsm.style.weights_path);
    }
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    expect_object(m, origin, "model");
    reject_unknown(m, origin, "model",
                   {"encoder_channels", "stage_depth", "num_classes", "attention",
                    "attention_reduction", "attention_spatial_kernel",
                    "pretrained_weights", "preset"});
    if (m.contains("preset")) {
      const std::string preset = m.at("preset").get<std::string>();
      if (preset == "full_scale")
        cfg.model = SegModelConfig::full_scale();
      else if (preset != "desk")
        fail(origin, "'model.preset' must be desk or full_scale");
    }
    take(m, origin, "model", "encoder_channels", cfg.model.encoder_channels);
    take(m, origin, "model", "stage_depth", cfg.model.stage_depth);
    take(m, origin, "model", "num_classes", cfg.model.num_classes);
    take(m, origin, "model", "attention", cfg.model.attention);
    take(m, origin, "model", "attention_reduction", cfg.model.attention_reduction);
    take(m, origin, "model", "attention_spatial_kernel",
         cfg.model.attention_spatial_kernel);
    take(m, origin, "model", "pretrained_weights", cfg.model.pretrained_weights);
  }

  cfg.train.seed = cfg.seed;
  if (root.contains("train")) {
    const json& t = root.at("train");
    expect_object(t, origin, "train");
    reject_unknown(t, origin, "train",
                   {"base_lr", "weight_decay", "poly_power", "batch_size",
                    "total_iterations", "seed", "checkpoint_every", "loss_weights"});
    take(t, origin, "train", "base_lr", cfg.train.base_lr);
    take(t, origin, "train", "weight_decay", cfg.train.weight_decay);
    take(t, origin, "train", "poly_power", cfg.train.poly_power);
    take(t, origin, "train", "batch_size", cfg.train.batch_size);
    take(t, origin, "train", "total_iterations", cfg.train.total_iterations);
    take(t, origin, "train", "seed", cfg.train.seed);
    take(t, origin, "train", "checkpoint_every", cfg.train.checkpoint_every);
    if (t.contains("loss_weights")) {
      const json& w = t.at("loss_weights");
      if (!w.is_array() || w.size() != 5)
        fail(origin, "'train.loss_weights' must list five weights");
      for (int i = 0; i < 5; ++i) cfg.train.loss_weights[i] = w[i].get<double>();
    }
  }

  if (root.contains("eval")) {
    const json& e = root.at("eval");
    expect_object(e, origin, "eval");
    reject_unknown(e, origin, "eval", {"out_dir", "aggregation", "checkpoint", "split"});
    take(e, origin, "eval", "out_dir", cfg.eval.out_dir);
    take(e, origin, "eval", "aggregation", cfg.eval.aggregation);
    take(e, origin, "eval", "checkpoint", cfg.eval.checkpoint);
    take(e, origin, "eval", "split", cfg.eval.split);
  }

  cfg.validate();

  // referenced files must resolve at load time
  auto must_exist = [&](const std::string& path, const char* what) {
    if (!path.empty() && !fs::exists(path))
      fail(origin, std::string(what) + " does not exist: " + path);
  };
  must_exist(cfg.data.manifest, "data.manifest");
  if (cfg.data.prepare) must_exist(cfg.data.prepare->source_list, "data.prepare.source_list");
  must_exist(cfg.model.pretrained_weights, "model.pretrained_weights");
  must_exist(cfg.eval.checkpoint, "eval.checkpoint");
  if (cfg.bsm.style.transform == "conv")
    must_exist(cfg.bsm.style.weights_path, "bsm.style.weights_path");

  return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
  bsm.validate();
  model.validate();
  if (data.synthetic) data.synthetic->validate();
  // train.total_iterations stays optional until the train command runs
  if (!(train.base_lr > 0)) throw std::invalid_argument("config: train.base_lr must be > 0");
  if (!(train.poly_power > 0))
    throw std::invalid_argument("config: train.poly_power must be > 0");
  if (train.batch_size < 1)
    throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (eval.aggregation != "image_mean" && eval.aggregation != "city_mean")
    throw std::invalid_argument("config: eval.aggregation must be image_mean or city_mean");
  if (eval.split != "train" && eval.split != "val" && eval.split != "test")
    throw std::invalid_argument("config: eval.split must be train, val or test");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail(origin, std::string("not valid JSON: ") + e.what());
  }
  return parse_json(root, origin);
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config " + path + ": cannot open");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json root;
  root["seed"] = cfg.seed;

  json data;
  data["manifest"] = cfg.data.manifest;
  data["root"] = cfg.data.root;
  if (cfg.data.synthetic) {
    const SyntheticSpec& s = *cfg.data.synthetic;
    json j;
    j["tiles_per_style"] = s.tiles_per_style;
    j["tile_size"] = s.tile_size;
    j["buildings_min"] = s.buildings_min;
    j["buildings_max"] = s.buildings_max;
    j["building_size_min"] = s.building_size_min;
    j["building_size_max"] = s.building_size_max;
    j["style_a"] = style_params_to_json(s.style_a);
    j["style_b"] = style_params_to_json(s.style_b);
    j["seed"] = s.seed;
    data["synthetic"] = j;
  }
  if (cfg.data.prepare) {
    const PrepareSpec& p = *cfg.data.prepare;
    json j;
    j["source_list"] = p.source_list;
    j["tile_size"] = p.tile_size;
    j["filter_background"] = p.filter_background;
    j["split_ratio"] = p.split_ratio;
    j["explicit_train_count"] = p.explicit_train_count;
    j["image_format"] = p.image_format;
    data["prepare"] = j;
  }
  root["data"] = data;

  json bsm_j;
  bsm_j["gate_ga"] = cfg.bsm.gate_ga;
  bsm_j["gate_ca"] = cfg.bsm.gate_ca;
  bsm_j["gate_sm"] = cfg.bsm.gate_sm;
  json enabled = json::array();
  for (Submodule m : {Submodule::GA, Submodule::CA, Submodule::SM})
    if (cfg.bsm.enabled.count(m)) enabled.push_back(submodule_name(m));
  bsm_j["enabled"] = enabled;
  json aug;
  const auto& ac = cfg.bsm.augment;
  aug["per_op_probability"] = ac.per_op_probability;
  aug["rotation_bound_deg"] = ac.rotation_bound_deg;
  aug["scale_range"] = ac.scale_range;
  aug["brightness_range"] = ac.brightness_range;
  aug["color_balance_range"] = ac.color_balance_range;
  aug["contrast_range"] = ac.contrast_range;
  aug["sharpness_range"] = ac.sharpness_range;
  aug["blur_sigma_range"] = ac.blur_sigma_range;
  bsm_j["augment"] = aug;
  json style;
  style["alpha"] = cfg.bsm.style.alpha;
  style["epsilon"] = cfg.bsm.style.epsilon;
  style["transform"] = cfg.bsm.style.transform;
  style["weights_path"] = cfg.bsm.style.weights_path;
  bsm_j["style"] = style;
  root["bsm"] = bsm_j;

  json model;
  model["encoder_channels"] = cfg.model.encoder_channels;
  model["stage_depth"] = cfg.model.stage_depth;
  model["num_classes"] = cfg.model.num_classes;
  model["attention"] = cfg.model.attention;
  model["attention_reduction"] = cfg.model.attention_reduction;
  model["attention_spatial_kernel"] = cfg.model.attention_spatial_kernel;
  model["pretrained_weights"] = cfg.model.pretrained_weights;
  root["model"] = model;

  json train;
  train["base_lr"] = cfg.train.base_lr;
  train["weight_decay"] = cfg.train.weight_decay;
  train["poly_power"] = cfg.train.poly_power;
  train["batch_size"] = cfg.train.batch_size;
  train["total_iterations"] = cfg.train.total_iterations;
  train["seed"] = cfg.train.seed;
  train["checkpoint_every"] = cfg.train.checkpoint_every;
  train["loss_weights"] = cfg.train.loss_weights;
  root["train"] = train;

  json eval_j;
  eval_j["out_dir"] = cfg.eval.out_dir;
  eval_j["aggregation"] = cfg.eval.aggregation;
  eval_j["checkpoint"] = cfg.eval.checkpoint;
  eval_j["split"] = cfg.eval.split;
  root["eval"] = eval_j;

  return root.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = serialize_config(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace bsm
