#include "voxelenc/hrf.hpp"

#include <cmath>
#include <string>

#include "voxelenc/error.hpp"

namespace voxelenc::hrf {

namespace {

// Gamma density with shape a and scale b, evaluated in log space.
double gamma_density(double t, double shape, double scale) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t / scale - shape * std::log(scale) -
                  std::lgamma(shape));
}

// Fractional grid positions are nudged so that values such as 0.02 * 50 land
// on the intended sample.
constexpr double kGridSlack = 1e-9;

}  // namespace

void HrfParams::validate() const {
  auto fail = [](const std::string& what) { throw ArgumentError("invalid HRF parameters: " + what); };
  if (!(peak_shape > 1.0)) fail("a1 must be > 1");
  if (!(undershoot_shape > 1.0)) fail("a2 must be > 1");
  if (!(peak_scale > 0.0)) fail("b1 must be > 0");
  if (!(undershoot_scale > 0.0)) fail("b2 must be > 0");
  if (!(undershoot_ratio >= 0.0)) fail("c must be >= 0");
  if (!(length_s > 0.0)) fail("length_s must be > 0");
  if (!(oversample_hz >= 10.0)) fail("oversample_hz must be >= 10");
}

double sample_hrf(const HrfParams& p, double t) {
  if (t < 0.0 || std::isnan(t)) {
    throw DomainError("sample_hrf: t must be >= 0, got " + std::to_string(t));
  }
  return gamma_density(t, p.peak_shape, p.peak_scale) -
         p.undershoot_ratio * gamma_density(t, p.undershoot_shape, p.undershoot_scale);
}

ConvolveResult convolve_track(const io::StimulusTrack& track, const HrfParams& p, double tr_s,
                              std::size_t n_trs, const ConvolveOptions& opts) {
  p.validate();
  track.validate();
  if (n_trs < 1) throw ArgumentError("convolve_track: n_trs must be >= 1");
  if (!(tr_s > 0.0)) throw ArgumentError("convolve_track: tr_s must be > 0");

  const double os = p.oversample_hz;
  const double dt = 1.0 / os;
  const std::size_t dim = track.dim;
  const double horizon = static_cast<double>(n_trs) * tr_s + p.length_s;
  const auto n_fine = static_cast<std::size_t>(std::ceil(horizon * os - kGridSlack));

  ConvolveResult result{DenseMatrix(n_trs, dim), 0};

  // (1) oversampled stream, one column per embedding dimension
  std::vector<double> stream(n_fine * dim, 0.0);
  std::vector<char> active(n_fine, 0);
  for (const auto& e : track.events) {
    std::size_t begin = 0;
    std::size_t end = 0;
    double amplitude = 1.0;
    const double stop = e.onset_s + e.duration_s;
    if (stop > horizon) ++result.truncated_events;
    if (opts.impulse) {
      begin = static_cast<std::size_t>(std::llround(e.onset_s * os));
      end = begin + 1;
      amplitude = os;
    } else {
      begin = static_cast<std::size_t>(std::ceil(e.onset_s * os - kGridSlack));
      end = static_cast<std::size_t>(std::ceil(stop * os - kGridSlack));
      if (end <= begin) end = begin + 1;
    }
    end = std::min(end, n_fine);
    for (std::size_t j = begin; j < end; ++j) {
      double* row = stream.data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) row[d] += amplitude * e.vector[d];
      active[j] = 1;
    }
  }

  // (2)+(3) convolve with the HRF, evaluated only at the TR sample times
  const double steps_per_tr = tr_s * os;
  const bool aligned = std::abs(steps_per_tr - std::round(steps_per_tr)) < kGridSlack;
  const auto kernel_len = static_cast<std::size_t>(std::ceil(p.length_s * os - kGridSlack));
  std::vector<double> kernel;
  if (aligned) {
    kernel.resize(kernel_len);
    for (std::size_t m = 0; m < kernel_len; ++m) {
      kernel[m] = sample_hrf(p, static_cast<double>(m) * dt) * dt;
    }
  }
  for (std::size_t k = 0; k < n_trs; ++k) {
    const double t = static_cast<double>(k) * tr_s;
    const double last = std::floor(t * os + kGridSlack);
    const double first = std::max(0.0, std::floor((t - p.length_s) * os + kGridSlack) + 1.0);
    auto out = result.design.row(k);
    for (double jf = first; jf <= last; jf += 1.0) {
      const auto j = static_cast<std::size_t>(jf);
      if (j >= n_fine || !active[j]) continue;
      double w = 0.0;
      if (aligned) {
        const auto m = static_cast<std::size_t>(
            std::llround(static_cast<double>(k) * std::round(steps_per_tr)) -
            static_cast<long long>(j));
        if (m >= kernel_len) continue;
        w = kernel[m];
      } else {
        // the window bounds already decide membership; tau only needs
        // guarding against roundoff below zero
        const double tau = std::max(0.0, t - jf * dt);
        w = sample_hrf(p, tau) * dt;
      }
      const double* row = stream.data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) out[d] += w * row[d];
    }
  }
  return result;
}

void zscore_columns(DenseMatrix& m) {
  const std::size_t n = m.rows();
  if (n == 0) return;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += m(r, c);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) ss += (m(r, c) - mean) * (m(r, c) - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    for (std::size_t r = 0; r < n; ++r) m(r, c) = sd > 0.0 ? (m(r, c) - mean) / sd : 0.0;
  }
}

}  // namespace voxelenc::hrf
