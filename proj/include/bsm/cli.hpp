#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace bsm::cli {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;  // overrides the config's global seed
  std::string out_override;           // overrides eval.out_dir
  std::string input;                  // report command: structured file to render
  int workers = 0;                    // >0 fixes the worker count
  bool trace = false;                 // write the augmentation trace during training
};

std::string usage();

// Commands: prepare | synth | train | eval | ablate | stylemix-preview | report.
// Returns the process exit status; unknown commands print usage and fail.
int dispatch(const std::string& command, const Options& opts);

}  // namespace bsm::cli
