#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

namespace voxelenc::pipeline {

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

// {"tool": "voxelenc", "version": ..., "verb": ..., "config_hash": ..., "seeds": {...}}.
// No timestamps or host data, so reruns produce identical sidecars.
nlohmann::json provenance(const std::string& verb, const nlohmann::json& canonical_config,
                          const std::map<std::string, std::uint64_t>& seeds = {});

// Writes pretty-printed JSON with a trailing newline.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

// Fixed "%.17g" rendering so CSV/JSON text is stable across runs.
std::string format_double(double v);

}  // namespace voxelenc::pipeline
