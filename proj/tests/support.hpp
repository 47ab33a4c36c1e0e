#pragma once

#include <unistd.h>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mlnood/mlnood.hpp"

namespace support {

using namespace mlnood;

inline std::shared_ptr<const Schema> binary_schema(const std::vector<std::string>& names) {
  std::vector<Concept> cs;
  for (const auto& n : names) cs.push_back(Concept{n, {"false", "true"}});
  return std::make_shared<const Schema>(Schema(std::move(cs)));
}

inline std::vector<CompiledConstraint> kb(const std::shared_ptr<const Schema>& s, const std::vector<std::string>& src) {
  std::vector<CompiledConstraint> out;
  for (std::size_t i = 0; i < src.size(); ++i) out.push_back(compile(parse(src[i]), s, i));
  return out;
}

inline MlnModel model(const std::shared_ptr<const Schema>& s, const std::vector<std::string>& src,
                      std::vector<double> w) {
  return MlnModel(s, kb(s, src), std::move(w));
}

inline Dataset rows(const std::shared_ptr<const Schema>& s, const std::vector<std::vector<ValueIndex>>& zs) {
  Dataset d(s, {});
  for (const auto& z : zs) d.add_row(z);
  return d;
}

// Scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("mlnood_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace support
