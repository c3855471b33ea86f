#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bsm/tensor.hpp"

namespace bsm {

// On-disk container for named parameter arrays plus free-form text metadata.
// Layout: a UTF-8 header ("bsm-archive/1", `meta key value` lines, one
// `array name n c h w` line per tensor, then `data`), followed by the raw
// little-endian float64 payload in directory order. Model checkpoints and
// style-transform weight files both use it; the field conventions are
// documented in the README so independently exported weights can be loaded.
struct Archive {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  bool has_meta(const std::string& key) const;
  std::string meta_value(const std::string& key) const;  // "" when absent
  const Tensor* find(const std::string& name) const;
};

void save_archive(const std::string& path, const Archive& a);
Archive load_archive(const std::string& path);

}  // namespace bsm
