#include "voxelenc/pipeline/provenance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "voxelenc/error.hpp"

#ifndef VOXELENC_VERSION
#define VOXELENC_VERSION "0.0.0"
#endif

namespace voxelenc::pipeline {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

nlohmann::json provenance(const std::string& verb, const nlohmann::json& canonical_config,
                          const std::map<std::string, std::uint64_t>& seeds) {
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [name, value] : seeds) s[name] = value;
  return {{"tool", "voxelenc"},
          {"version", VOXELENC_VERSION},
          {"verb", verb},
          {"config_hash", hex64(fnv1a64(canonical_config.dump()))},
          {"seeds", s}};
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace voxelenc::pipeline
