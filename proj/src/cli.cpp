#include "bsm/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bsm/config.hpp"
#include "bsm/data_io.hpp"
#include "bsm/evaluator.hpp"
#include "bsm/model.hpp"
#include "bsm/raster_io.hpp"
#include "bsm/rng.hpp"
#include "bsm/trainer.hpp"

namespace fs = std::filesystem;

namespace bsm::cli {

std::string usage() {
  return "usage: bsm <command> --config <path> [--seed <int>] [--out <dir>]\n"
         "           [--workers <int>] [--trace] [--in <report.tsv>]\n"
         "commands:\n"
         "  prepare            tile + filter + split source scenes into a dataset\n"
         "  synth              render the synthetic two-style dataset\n"
         "  train              train the building-extraction model\n"
         "  eval               score a checkpoint on a dataset split\n"
         "  ablate             train/evaluate the eight submodule combinations\n"
         "  stylemix-preview   dump before/after grids for one seeded batch\n"
         "  report             re-render table + chart from a structured report\n";
}

namespace {

ExperimentConfig load_config(const Options& opts) {
  if (opts.config_path.empty())
    throw std::runtime_error("--config <path> is required for this command");
  ExperimentConfig cfg = parse_config(opts.config_path);
  if (const char* env = std::getenv("BSM_OUT_DIR"); env && *env)
    cfg.eval.out_dir = env;
  if (!opts.out_override.empty()) cfg.eval.out_dir = opts.out_override;
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.train.seed = *opts.seed;
    if (cfg.data.synthetic) cfg.data.synthetic->seed = *opts.seed;
  }
#ifdef _OPENMP
  int workers = 0;
  if (const char* env = std::getenv("BSM_WORKERS"); env && *env) workers = std::atoi(env);
  if (opts.workers > 0) workers = opts.workers;
  if (workers > 0) omp_set_num_threads(workers);
#endif
  return cfg;
}

// Every run leaves the effective post-defaulting config beside its outputs;
// re-running from that copy reproduces the run.
void freeze_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.eval.out_dir);
  std::ofstream f(fs::path(cfg.eval.out_dir) / "config.resolved.json");
  if (!f) throw std::runtime_error("cannot write resolved config");
  f << serialize_config(cfg);
}

std::string dataset_root(const ExperimentConfig& cfg) {
  if (!cfg.data.root.empty()) return cfg.data.root;
  if (!cfg.data.manifest.empty())
    return fs::path(cfg.data.manifest).parent_path().string();
  return (fs::path(cfg.eval.out_dir) / "dataset").string();
}

std::string manifest_path(const ExperimentConfig& cfg) {
  if (!cfg.data.manifest.empty()) return cfg.data.manifest;
  return (fs::path(dataset_root(cfg)) / "manifest.tsv").string();
}

std::vector<Tile> load_split(const ExperimentConfig& cfg, const std::string& split) {
  DatasetManifest m = read_manifest(manifest_path(cfg));
  validate_manifest(m, dataset_root(cfg));
  std::vector<Tile> tiles = load_tiles(m, dataset_root(cfg), split);
  if (tiles.empty())
    throw std::runtime_error("no tiles in split '" + split + "' of " + manifest_path(cfg));
  return tiles;
}

ImageU8 tile_grid(const std::vector<Tile>& tiles, int cols) {
  const int n = static_cast<int>(tiles.size());
  cols = std::min(cols, n);
  const int rows = (n + cols - 1) / cols;
  const int th = tiles[0].image.h, tw = tiles[0].image.w, gap = 2;
  ImageU8 grid(rows * th + (rows - 1) * gap, cols * tw + (cols - 1) * gap, 3, 255);
  for (int i = 0; i < n; ++i) {
    const int r = i / cols, c = i % cols;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int ch = 0; ch < 3; ++ch)
          grid.at(r * (th + gap) + y, c * (tw + gap) + x, ch) =
              tiles[i].image.at(y, x, ch);
  }
  return grid;
}

int cmd_synth(const ExperimentConfig& cfg) {
  if (!cfg.data.synthetic)
    throw std::runtime_error("synth: config has no data.synthetic section");
  const std::string root = dataset_root(cfg);
  DatasetManifest m = generate_synthetic_dataset(*cfg.data.synthetic, root);
  long train = 0, test = 0;
  for (const auto& e : m.entries) (e.split == "test" ? test : train)++;
  std::cout << "synth: wrote " << m.entries.size() << " tiles (" << train
            << " train, " << test << " test) under " << root << "\n";
  return 0;
}

int cmd_prepare(const ExperimentConfig& cfg) {
  if (!cfg.data.prepare)
    throw std::runtime_error("prepare: config has no data.prepare section");
  const std::string root = dataset_root(cfg);
  DatasetManifest m = prepare_dataset(*cfg.data.prepare, cfg.seed, root);
  std::cout << "prepare: wrote " << m.entries.size() << " tiles under " << root << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, bool trace) {
  if (cfg.train.total_iterations < 0)
    throw std::runtime_error("train: train.total_iterations must be set");
  std::vector<Tile> tiles = load_split(cfg, "train");
  SegNet model(cfg.model, derive_seed(cfg.train.seed, 0x5EEDuLL));
  if (!cfg.model.pretrained_weights.empty()) {
    const int taken = load_matching_params(cfg.model.pretrained_weights, model);
    std::cout << "train: warm start took " << taken << " arrays from "
              << cfg.model.pretrained_weights << "\n";
  }
  const std::string run_dir = (fs::path(cfg.eval.out_dir) / "train").string();
  TrainResult r = train(model, tiles, cfg.bsm, cfg.train, run_dir, config_hash(cfg), trace);
  if (r.aborted) {
    std::cerr << "train: aborted, " << r.abort_reason << " (last good checkpoint at "
              << r.checkpoint_path << ")\n";
    return 1;
  }
  std::cout << "train: " << cfg.train.total_iterations << " iterations on "
            << tiles.size() << " tiles; checkpoint " << r.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
  std::string ckpt = cfg.eval.checkpoint;
  if (ckpt.empty())
    ckpt = (fs::path(cfg.eval.out_dir) / "train" / "checkpoint_final.bsa").string();
  SegNet model(cfg.model, 0);
  load_checkpoint(ckpt, model);
  std::vector<Tile> tiles = load_split(cfg, cfg.eval.split);
  EvalReport rep = evaluate_model(model, tiles, config_hash(cfg));
  const std::string prefix = (fs::path(cfg.eval.out_dir) / "eval_report").string();
  emit_report(rep, prefix);
  const double headline =
      cfg.eval.aggregation == "city_mean" ? rep.miou_city_mean : rep.miou_image_mean;
  std::cout << "eval: mIoU (" << cfg.eval.aggregation << ") = " << headline << " over "
            << tiles.size() << " tiles; report at " << prefix << ".tsv\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  if (cfg.train.total_iterations < 0)
    throw std::runtime_error("ablate: train.total_iterations must be set");
  std::vector<Tile> tiles_train = load_split(cfg, "train");
  std::vector<Tile> tiles_eval = load_split(cfg, cfg.eval.split);
  const std::string rows_dir = (fs::path(cfg.eval.out_dir) / "ablation_rows").string();
  AblationTable table = run_ablation(tiles_train, tiles_eval, cfg.model, cfg.bsm,
                                     cfg.train, rows_dir, config_hash(cfg));
  const std::string prefix = (fs::path(cfg.eval.out_dir) / "ablation").string();
  emit_ablation(table, prefix);
  std::cout << "ablate: " << table.rows.size() << " rows; table at " << prefix
            << ".tsv\n";
  return 0;
}

int cmd_preview(const ExperimentConfig& cfg) {
  std::vector<Tile> tiles = load_split(cfg, "train");
  const int b = std::min<int>(cfg.train.batch_size, static_cast<int>(tiles.size()));
  std::vector<int> idx(b);
  for (int i = 0; i < b; ++i) idx[i] = i;
  SampleBatch batch = make_batch(tiles, idx);

  fs::create_directories(cfg.eval.out_dir);
  const fs::path out(cfg.eval.out_dir);
  write_image((out / "preview_input.png").string(), tile_grid(batch_to_tiles(batch), 8));

  // gates bypassed so every stage shows its effect
  Rng rng(derive_seed(cfg.seed, 0xF1E1DuLL));
  SampleBatch content = apply_geometric(batch, cfg.bsm.augment, rng);
  content = apply_color(content, cfg.bsm.augment, rng);
  write_image((out / "preview_augmented.png").string(),
              tile_grid(batch_to_tiles(content), 8));

  auto transform = make_transform(cfg.bsm.style);
  SampleBatch mixed = style_mix_batch(content, cfg.bsm.style, *transform, rng);
  write_image((out / "preview_mixed.png").string(), tile_grid(batch_to_tiles(mixed), 8));

  std::cout << "stylemix-preview: grids under " << cfg.eval.out_dir << "\n";
  return 0;
}

int cmd_report(const Options& opts) {
  if (opts.input.empty())
    throw std::runtime_error("report: --in <structured report .tsv> is required");
  std::ifstream f(opts.input);
  if (!f) throw std::runtime_error("report: cannot open " + opts.input);
  std::string first;
  std::getline(f, first);
  f.close();
  std::string prefix = opts.input;
  if (prefix.size() > 4 && prefix.substr(prefix.size() - 4) == ".tsv")
    prefix = prefix.substr(0, prefix.size() - 4);
  if (first == "schema\tbsm-eval-report/1") {
    emit_report(parse_report(opts.input), prefix);
  } else if (first == "schema\tbsm-ablation/1") {
    emit_ablation(parse_ablation(opts.input), prefix);
  } else {
    throw std::runtime_error("report: unrecognized schema in " + opts.input);
  }
  std::cout << "report: re-rendered " << prefix << "_table.txt and " << prefix
            << "_chart.png\n";
  return 0;
}

}  // namespace

int dispatch(const std::string& command, const Options& opts) {
  try {
    if (command == "report") return cmd_report(opts);
    if (command == "prepare" || command == "synth" || command == "train" ||
        command == "eval" || command == "ablate" || command == "stylemix-preview") {
      ExperimentConfig cfg = load_config(opts);
      freeze_config(cfg);
      if (command == "prepare") return cmd_prepare(cfg);
      if (command == "synth") return cmd_synth(cfg);
      if (command == "train") return cmd_train(cfg, opts.trace);
      if (command == "eval") return cmd_eval(cfg);
      if (command == "ablate") return cmd_ablate(cfg);
      return cmd_preview(cfg);
    }
    std::cerr << "unknown command: " << command << "\n" << usage();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bsm::cli
