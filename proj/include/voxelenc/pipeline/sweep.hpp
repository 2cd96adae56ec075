#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxelenc/error.hpp"
#include "voxelenc/io.hpp"
#include "voxelenc/lm/model.hpp"
#include "voxelenc/lm/tasks.hpp"
#include "voxelenc/pipeline/config.hpp"
#include "voxelenc/synth.hpp"

namespace voxelenc::pipeline {

// A failure inside one pipeline stage. Keeps the exit-code class of the
// underlying error.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, bool validation)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)),
        validation_(validation) {}
  const std::string& stage() const noexcept { return stage_; }
  bool is_validation() const noexcept override { return validation_; }

 private:
  std::string stage_;
  bool validation_;
};

// Convolves the track on the TR grid and z-scores columns when configured.
DenseMatrix design_from_track(const io::StimulusTrack& track, const PipelineConfig& cfg,
                              std::size_t n_trs);

struct SweepFixture {
  lm::ToyLmParams base;  // seeded init plus the language-model warm-up
  lm::TaskDataset task;
  lm::SentenceManifest stimuli;
  io::RoiAtlas atlas;
  std::vector<double> voxel_snr;
  std::vector<synth::SubjectData> subjects;  // built from the base model's embeddings
  double pretrain_initial_loss = 0.0;
  double pretrain_final_loss = 0.0;
};

SweepFixture build_sweep_fixture(const PipelineConfig& cfg);

struct SweepRow {
  std::optional<double> proportion;  // empty for the untuned baseline
  int network = 0;
  std::string network_name;
  double mean_r = 0.0;  // mean over subjects of the network-mean r
  double std_r = 0.0;   // sample sd over subjects
  std::size_t n_subjects = 0;
};

struct SweepCondition {
  std::optional<double> proportion;
  std::size_t trainable_parameters = 0;
  double task_loss_before = 0.0;
  double task_loss_after = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<SweepCondition> conditions;
  // Spearman correlation between proportion and mean_r over the tuned
  // conditions, per network name; empty when undefined.
  std::map<std::string, std::optional<double>> rank_correlation;
};

std::string sweep_csv(const SweepReport& report);

// Untuned baseline plus one partial-tuning run per proportion. Writes
// sweep.csv and sweep.json into out_dir after every condition, so a failure
// leaves the finished rows on disk.
SweepReport run_sweep(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace voxelenc::pipeline
