#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "voxelenc/io.hpp"
#include "voxelenc/lm/model.hpp"
#include "voxelenc/lm/tasks.hpp"

namespace voxelenc::lm {

struct ModelFile {
  ToyLmParams params;
  std::optional<PrefixBank> prefix;
  std::string meta_json = "{}";  // free-form, e.g. tuning mode and provenance
};

// <path> holds the flattened parameters as a 1 x P f64 VEM1 row, <path>.json
// the config and tensor table, and <stem>.prefix.vem the prefix bank if any.
void save_model(const ModelFile& model, const std::filesystem::path& path);
ModelFile load_model(const std::filesystem::path& path);

std::filesystem::path prefix_path(const std::filesystem::path& model_path);

// One event per sentence: the mean-pooled last-layer embedding, timed as in
// the manifest.
io::StimulusTrack embed_sentences(const ToyLmParams& params, const PrefixBank* prefix,
                                  const SentenceManifest& manifest, std::size_t workers = 1);

}  // namespace voxelenc::lm
