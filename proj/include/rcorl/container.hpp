#pragma once

#include "rcorl/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace rcorl {

using json = nlohmann::ordered_json;

// Versioned binary container shared by dataset and policy files: a JSON
// manifest followed by named row-major float64 arrays (little-endian) and a
// trailing FNV-1a checksum over everything after the magic.
struct NamedArray {
  std::string name;
  Mat data;
};

struct Container {
  json manifest;
  std::vector<NamedArray> arrays;

  const Mat& array(std::string_view name) const;
  bool has_array(std::string_view name) const;
};

void write_container(const std::filesystem::path& path, const json& manifest,
                     const std::vector<NamedArray>& arrays);

/// Throws on bad magic, version mismatch, truncation, or checksum failure.
Container read_container(const std::filesystem::path& path);

}  // namespace rcorl
