#include <cstdint>
#include <string>

#include "CLI11.hpp"
#include "bsm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Batch style mixing and building-extraction experiments"};
  app.footer(bsm::cli::usage());

  std::string command;
  app.add_option("command", command,
                 "prepare|synth|train|eval|ablate|stylemix-preview|report")
      ->required();

  bsm::cli::Options opts;
  app.add_option("--config", opts.config_path, "experiment config (JSON)");
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = app.add_option("--seed", seed, "override the global seed");
  app.add_option("--out", opts.out_override, "override the output directory");
  app.add_option("--workers", opts.workers, "worker thread count (0 = default)");
  app.add_flag("--trace", opts.trace, "write the augmentation trace while training");
  app.add_option("--in", opts.input, "structured report to re-render (report command)");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) opts.seed = seed;

  return bsm::cli::dispatch(command, opts);
}
