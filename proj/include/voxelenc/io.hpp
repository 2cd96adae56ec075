#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxelenc/matrix.hpp"

namespace voxelenc::io {

// VEM1 container: "VEM1", dtype byte, rank byte (2), two reserved zero bytes,
// rows and cols as u64 little-endian, then the row-major little-endian payload.
inline constexpr std::size_t kVemHeaderSize = 24;

struct ReadOptions {
  // Accept NaN/Inf entries. Only for matrices that travel with a mask
  // (e.g. chosen_lambda next to excluded.vem).
  bool allow_nonfinite = false;
};

std::vector<std::uint8_t> encode_matrix(const DenseMatrix& m);
DenseMatrix decode_matrix(const std::vector<std::uint8_t>& bytes, const ReadOptions& opts = {},
                          const std::string& origin = "<memory>");

void write_matrix(const DenseMatrix& m, const std::filesystem::path& path);
DenseMatrix read_matrix(const std::filesystem::path& path, const ReadOptions& opts = {});

struct StimulusEvent {
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::vector<float> vector;
};

struct StimulusTrack {
  std::string run_id;
  std::size_t dim = 0;
  std::vector<StimulusEvent> events;

  // Throws ValidationError when events are unsorted, onsets negative or a
  // vector has the wrong length.
  void validate() const;
};

// Reads the JSON metadata and the sibling VEM1 matrix of event vectors. The
// sibling defaults to the JSON path with extension ".vem"; a "vectors" key
// overrides it (relative to the JSON file).
StimulusTrack load_stimulus_track(const std::filesystem::path& json_path);

// Writes <stem>.json and <stem>.vem (f32 vectors, one row per event).
void save_stimulus_track(const StimulusTrack& track, const std::filesystem::path& json_path);

struct BoldRun {
  DenseMatrix signal;  // N_E x N_V
  double tr_s = 0.0;
  std::string subject_id;
  std::string run_id;

  void validate() const;
};

// tr_s is mandatory metadata; it is never defaulted.
BoldRun load_bold_run(const std::filesystem::path& path, double tr_s, std::string subject_id,
                      std::string run_id);

struct RoiAtlas {
  std::vector<int> labels;
  std::map<int, std::string> names;

  void validate(std::size_t n_voxels) const;
};

std::map<int, std::string> default_network_names();

// Labels come from a VEM1 vector (1 x N_V or N_V x 1) of integer codes.
// Names are read from the sibling "<stem>.json" ({"names": {"0": "language"}})
// when present, otherwise the four default networks are used.
RoiAtlas load_atlas(const std::filesystem::path& path);
void save_atlas(const RoiAtlas& atlas, const std::filesystem::path& path);

std::vector<double> read_vector(const std::filesystem::path& path, const ReadOptions& opts = {});

}  // namespace voxelenc::io
