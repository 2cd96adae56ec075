#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "voxelenc/hrf.hpp"
#include "voxelenc/io.hpp"
#include "voxelenc/matrix.hpp"

namespace voxelenc::synth {

enum class NoiseModel { White, Ar1 };

NoiseModel parse_noise_model(const std::string& name);
std::string to_string(NoiseModel m);

struct SynthSpec {
  std::size_t n_subjects = 12;
  std::size_t n_voxels = 400;
  std::size_t n_trs = 300;
  double tr_s = 2.0;
  std::size_t dim = 16;
  // One value per contiguous voxel band; +inf means noise-free.
  std::vector<double> snr = {1.0};
  NoiseModel noise = NoiseModel::White;
  double rho = 0.0;
  std::uint64_t seed = 0;

  double min_duration_s = 2.0;
  double max_duration_s = 4.0;
  double min_gap_s = 0.5;
  double max_gap_s = 1.5;
  hrf::HrfParams hrf;

  void validate() const;
};

struct SubjectData {
  std::string subject_id;
  io::BoldRun bold;
  DenseMatrix true_weights;  // dim x n_voxels, unit-norm columns
  std::vector<double> snr;   // per voxel
};

struct SharedStimulus {
  io::StimulusTrack track;
  DenseMatrix design;  // convolved, z-scored, n_trs x dim
};

struct SynthDataset {
  SynthSpec spec;
  SharedStimulus stimulus;
  std::vector<SubjectData> subjects;
  io::RoiAtlas atlas;
};

// Stable 64-bit seed for an independent sub-generator.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& subject_id,
                          const std::string& stream);

std::string subject_id(std::size_t index);

// Per-voxel SNR from the band list.
std::vector<double> voxel_snr(const SynthSpec& spec);

// Four networks over contiguous equal voxel blocks.
io::RoiAtlas make_atlas(std::size_t n_voxels);

SharedStimulus generate_stimulus(const SynthSpec& spec);

// Unit-variance noise, n_trs x n_voxels, from the subject's noise stream.
DenseMatrix generate_noise(const SynthSpec& spec, const std::string& subject,
                           const std::string& stream = "noise");

// X = Z W* + noise scaled so var(signal) / var(noise) equals the voxel's SNR
// exactly in-sample.
DenseMatrix mix_signal_noise(const DenseMatrix& signal, const DenseMatrix& noise,
                             std::span<const double> snr);

SubjectData generate_subject(const SynthSpec& spec, const DenseMatrix& design,
                             std::size_t index);

// Builds subject data from an arbitrary design (e.g. real embeddings).
SubjectData generate_subject_from_design(const SynthSpec& spec, const DenseMatrix& design,
                                         std::size_t index, std::span<const double> snr);

SynthDataset generate(const SynthSpec& spec);

// SNR at which a perfect model reaches correlation r: r^2 / (1 - r^2).
double snr_for_correlation(double r);
double correlation_for_snr(double snr);

// Copy of `a` whose data come from the same generative model with fresh noise,
// except that the voxels in `voxels` get extra signal so their attainable
// correlation rises by `delta`.
SynthDataset plant_effect(const SynthDataset& a, double delta,
                          std::span<const std::size_t> voxels);

// Writes stimulus.json/.vem, design.vem, atlas.vem, one directory per subject
// and a dataset.json manifest (with the provenance block when given).
void save_dataset(const SynthDataset& data, const std::string& dir,
                  const nlohmann::json& provenance = nullptr);

}  // namespace voxelenc::synth
