#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "voxelenc/cv.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/hrf.hpp"
#include "voxelenc/lm/model.hpp"
#include "voxelenc/lm/tasks.hpp"
#include "voxelenc/ridge.hpp"
#include "voxelenc/stats.hpp"
#include "voxelenc/synth.hpp"

namespace voxelenc::pipeline {

// Every problem found in a config, not just the first.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DatasetPaths {
  std::optional<std::filesystem::path> stimulus;  // StimulusTrack JSON
  std::optional<std::filesystem::path> design;    // precomputed design VEM1
  std::vector<std::filesystem::path> bold;        // one BOLD matrix per subject
  std::optional<std::filesystem::path> atlas;
};

struct ComparePair {
  std::string name;
  std::filesystem::path a;  // directory of per-subject score outputs
  std::filesystem::path b;
};

struct PretrainSettings {
  std::size_t corpus_size = 400;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::size_t steps = 150;
  double learning_rate = 0.02;
  std::size_t batch_size = 16;
};

struct TuneSettings {
  std::size_t steps = 150;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
};

struct BrainSettings {
  std::size_t n_subjects = 12;
  std::size_t n_voxels = 400;
  std::size_t n_trs = 300;
  // Language-network voxels carry signal from the untuned embeddings; the
  // other networks get background_snr.
  double planted_snr = 1.0;
  double background_snr = 0.0;
  synth::NoiseModel noise = synth::NoiseModel::White;
  double rho = 0.0;
};

struct SweepSettings {
  std::vector<double> proportions = {0.25, 0.5, 0.75, 1.0};
  std::uint64_t seed = 1;
  lm::ModelConfig model;
  std::size_t grammar_tokens = 400;
  PretrainSettings pretrain;
  lm::TopicTaskSpec task;
  TuneSettings tune;
  BrainSettings brain;
  std::size_t sentence_min_len = 5;
  std::size_t sentence_max_len = 10;
};

struct PipelineConfig {
  double tr_s = 0.0;  // required, never defaulted
  hrf::HrfParams hrf;
  bool zscore_design = true;
  ridge::RidgeConfig ridge;
  std::size_t n_folds = 5;
  cv::FoldScheme fold_scheme = cv::FoldScheme::ContiguousBlocks;
  std::uint64_t fold_seed = 0;
  stats::CompareOptions compare;
  std::vector<ComparePair> pairs;
  DatasetPaths dataset;
  std::filesystem::path output_dir = "out";
  std::size_t workers = 0;  // 0: VOXELENC_THREADS or all cores
  SweepSettings sweep;
};

// Parses and cross-checks a config object. Relative paths resolve against
// base_dir. Unknown keys, missing required keys, bad values and missing
// files are all collected into one ConfigError.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                            bool check_paths = true);

PipelineConfig validate_config(const std::filesystem::path& path);

// Canonical form with every default filled in; the provenance hash is taken
// over its serialisation.
nlohmann::json to_json(const PipelineConfig& cfg);

std::size_t resolve_workers(std::size_t requested);

// Synthetic dataset spec: tr_s is required; snr is a number, "inf" or a list
// of band values.
synth::SynthSpec parse_synth_spec(const nlohmann::json& j);
nlohmann::json to_json(const synth::SynthSpec& spec);

}  // namespace voxelenc::pipeline
