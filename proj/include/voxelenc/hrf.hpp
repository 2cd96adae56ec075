#pragma once

#include <cstddef>

#include "voxelenc/io.hpp"
#include "voxelenc/matrix.hpp"

namespace voxelenc::hrf {

// Double-gamma canonical HRF. Defaults are the SPM canonical shape.
struct HrfParams {
  double peak_shape = 6.0;         // a1
  double undershoot_shape = 16.0;  // a2
  double peak_scale = 1.0;         // b1, seconds
  double undershoot_scale = 1.0;   // b2, seconds
  double undershoot_ratio = 1.0 / 6.0;
  double length_s = 32.0;
  double oversample_hz = 50.0;

  void validate() const;
};

// g(t; a1, b1) - c * g(t; a2, b2) with g the gamma density.
double sample_hrf(const HrfParams& p, double t);

struct ConvolveOptions {
  // Each event is a unit-area impulse at its onset instead of a boxcar over
  // its duration.
  bool impulse = false;
};

struct ConvolveResult {
  DenseMatrix design;  // n_trs x dim
  std::size_t truncated_events = 0;
};

// Builds the oversampled event stream per embedding dimension, convolves it
// with the HRF and samples the result at t = k * tr_s.
ConvolveResult convolve_track(const io::StimulusTrack& track, const HrfParams& p, double tr_s,
                              std::size_t n_trs, const ConvolveOptions& opts = {});

// In-place z-score of every column; constant columns become zero.
void zscore_columns(DenseMatrix& m);

}  // namespace voxelenc::hrf
