#include "bsm/archive.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bsm {

namespace {
constexpr const char* kMagic = "bsm-archive/1";

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("archive '" + path + "': " + what);
}
}  // namespace

bool Archive::has_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return true;
  return false;
}

std::string Archive::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  return "";
}

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [k, t] : arrays)
    if (k == name) return &t;
  return nullptr;
}

void save_archive(const std::string& path, const Archive& a) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open for writing");
  f << kMagic << "\n";
  for (const auto& [k, v] : a.meta) f << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : a.arrays)
    f << "array " << name << " " << t.n << " " << t.c << " " << t.h << " " << t.w
      << "\n";
  f << "data\n";
  for (const auto& [name, t] : a.arrays)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!f) fail(path, "write error");
}

Archive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  std::string line;
  if (!std::getline(f, line) || line != kMagic) fail(path, "bad magic line");
  Archive a;
  while (std::getline(f, line)) {
    if (line == "data") break;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "meta") {
      std::string key;
      ss >> key;
      std::string value;
      std::getline(ss, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      if (key.empty()) fail(path, "meta line without key");
      a.meta.emplace_back(key, value);
    } else if (tag == "array") {
      std::string name;
      int n, c, h, w;
      if (!(ss >> name >> n >> c >> h >> w)) fail(path, "malformed array line: " + line);
      if (n < 0 || c < 0 || h < 0 || w < 0) fail(path, "negative dimension: " + name);
      a.arrays.emplace_back(name, Tensor(n, c, h, w));
    } else {
      fail(path, "unexpected header line: " + line);
    }
  }
  if (line != "data") fail(path, "missing data section");
  for (auto& [name, t] : a.arrays) {
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != t.size() * sizeof(double))
      fail(path, "truncated payload for array " + name);
  }
  return a;
}

}  // namespace bsm
