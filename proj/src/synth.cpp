#include "voxelenc/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "voxelenc/error.hpp"

namespace voxelenc::synth {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double sample_variance(const DenseMatrix& m, std::size_t col) {
  const std::size_t n = m.rows();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += m(i, col);
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (m(i, col) - mean) * (m(i, col) - mean);
  return ss / static_cast<double>(n - 1);
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double x = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += x * brow[j];
    }
  }
  return out;
}

DenseMatrix draw_true_weights(const SynthSpec& spec, const std::string& subject,
                              std::size_t dim) {
  std::mt19937_64 rng(derive_seed(spec.seed, subject, "weights"));
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix w(dim, spec.n_voxels);
  for (double& v : w.data()) v = normal(rng);
  for (std::size_t c = 0; c < spec.n_voxels; ++c) {
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) norm += w(d, c) * w(d, c);
    norm = std::sqrt(norm);
    for (std::size_t d = 0; d < dim; ++d) w(d, c) /= norm;
  }
  return w;
}

}  // namespace

NoiseModel parse_noise_model(const std::string& name) {
  if (name == "white") return NoiseModel::White;
  if (name == "ar1" || name == "AR1") return NoiseModel::Ar1;
  throw ArgumentError("unknown noise model '" + name + "' (expected white or ar1)");
}

std::string to_string(NoiseModel m) { return m == NoiseModel::White ? "white" : "ar1"; }

void SynthSpec::validate() const {
  if (n_subjects < 1 || n_voxels < 1 || n_trs < 1 || dim < 1) {
    throw ArgumentError("synth spec: all counts must be >= 1");
  }
  if (!(tr_s > 0.0)) throw ArgumentError("synth spec: tr_s must be > 0");
  if (snr.empty()) throw ArgumentError("synth spec: snr needs at least one band");
  for (double s : snr) {
    if (std::isnan(s) || s < 0.0) throw ArgumentError("synth spec: snr must be >= 0");
  }
  if (snr.size() > n_voxels) throw ArgumentError("synth spec: more snr bands than voxels");
  if (!(rho > -1.0 && rho < 1.0)) throw ArgumentError("synth spec: rho must lie in (-1, 1)");
  if (!(min_duration_s > 0.0 && max_duration_s >= min_duration_s)) {
    throw ArgumentError("synth spec: invalid event duration range");
  }
  if (!(min_gap_s >= 0.0 && max_gap_s >= min_gap_s)) {
    throw ArgumentError("synth spec: invalid gap range");
  }
  hrf.validate();
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& subject_id,
                          const std::string& stream) {
  // FNV-1a over the seed bytes, the subject id and the stream tag
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 0x100000001B3ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(seed >> (8 * i)));
  for (char c : subject_id) mix(static_cast<std::uint8_t>(c));
  mix(0);
  for (char c : stream) mix(static_cast<std::uint8_t>(c));
  return splitmix64(h);
}

std::string subject_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sub-%02zu", index + 1);
  return buf;
}

std::vector<double> voxel_snr(const SynthSpec& spec) {
  std::vector<double> out(spec.n_voxels);
  const std::size_t bands = spec.snr.size();
  for (std::size_t v = 0; v < spec.n_voxels; ++v) out[v] = spec.snr[v * bands / spec.n_voxels];
  return out;
}

io::RoiAtlas make_atlas(std::size_t n_voxels) {
  io::RoiAtlas atlas;
  atlas.names = io::default_network_names();
  const std::size_t networks = atlas.names.size();
  atlas.labels.resize(n_voxels);
  for (std::size_t v = 0; v < n_voxels; ++v) {
    atlas.labels[v] = static_cast<int>(v * networks / n_voxels);
  }
  return atlas;
}

SharedStimulus generate_stimulus(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, "shared", "stimulus"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SharedStimulus out;
  out.track.run_id = "run-01";
  out.track.dim = spec.dim;
  const double end = static_cast<double>(spec.n_trs) * spec.tr_s;
  double t = spec.min_gap_s + unit(rng) * (spec.max_gap_s - spec.min_gap_s);
  while (true) {
    const double duration =
        spec.min_duration_s + unit(rng) * (spec.max_duration_s - spec.min_duration_s);
    if (t + duration > end) break;
    io::StimulusEvent e;
    e.onset_s = t;
    e.duration_s = duration;
    e.vector.resize(spec.dim);
    for (float& x : e.vector) x = static_cast<float>(normal(rng));
    out.track.events.push_back(std::move(e));
    t += duration + spec.min_gap_s + unit(rng) * (spec.max_gap_s - spec.min_gap_s);
  }
  out.design = hrf::convolve_track(out.track, spec.hrf, spec.tr_s, spec.n_trs).design;
  hrf::zscore_columns(out.design);
  return out;
}

DenseMatrix generate_noise(const SynthSpec& spec, const std::string& subject,
                           const std::string& stream) {
  std::mt19937_64 rng(derive_seed(spec.seed, subject, stream));
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix noise(spec.n_trs, spec.n_voxels);
  if (spec.noise == NoiseModel::White) {
    for (double& v : noise.data()) v = normal(rng);
    return noise;
  }
  const double innovation = std::sqrt(1.0 - spec.rho * spec.rho);
  for (std::size_t c = 0; c < spec.n_voxels; ++c) {
    double prev = normal(rng);
    noise(0, c) = prev;
    for (std::size_t i = 1; i < spec.n_trs; ++i) {
      prev = spec.rho * prev + innovation * normal(rng);
      noise(i, c) = prev;
    }
  }
  return noise;
}

DenseMatrix mix_signal_noise(const DenseMatrix& signal, const DenseMatrix& noise,
                             std::span<const double> snr) {
  if (signal.rows() != noise.rows() || signal.cols() != noise.cols() ||
      snr.size() != signal.cols()) {
    throw ShapeError("mix_signal_noise: signal " + signal.shape_string() + ", noise " +
                     noise.shape_string() + " and " + std::to_string(snr.size()) +
                     " snr values disagree");
  }
  DenseMatrix out(signal.rows(), signal.cols());
  for (std::size_t c = 0; c < signal.cols(); ++c) {
    const double s = snr[c];
    double signal_gain = 1.0;
    double noise_gain = 0.0;
    if (s == 0.0) {
      signal_gain = 0.0;
      noise_gain = 1.0;
    } else if (std::isfinite(s)) {
      const double vs = sample_variance(signal, c);
      const double vn = sample_variance(noise, c);
      if (vs == 0.0) {
        signal_gain = 0.0;
        noise_gain = 1.0;
      } else {
        noise_gain = std::sqrt(vs / (s * vn));
      }
    }
    for (std::size_t i = 0; i < signal.rows(); ++i) {
      out(i, c) = signal_gain * signal(i, c) + noise_gain * noise(i, c);
    }
  }
  return out;
}

SubjectData generate_subject_from_design(const SynthSpec& spec, const DenseMatrix& design,
                                         std::size_t index, std::span<const double> snr) {
  if (design.rows() != spec.n_trs) {
    throw ShapeError("generate_subject: design has " + std::to_string(design.rows()) +
                     " rows, spec has " + std::to_string(spec.n_trs) + " TRs");
  }
  SubjectData s;
  s.subject_id = subject_id(index);
  s.true_weights = draw_true_weights(spec, s.subject_id, design.cols());
  s.snr.assign(snr.begin(), snr.end());
  const DenseMatrix signal = matmul(design, s.true_weights);
  const DenseMatrix noise = generate_noise(spec, s.subject_id);
  s.bold = io::BoldRun{mix_signal_noise(signal, noise, s.snr), spec.tr_s, s.subject_id, "run-01"};
  return s;
}

SubjectData generate_subject(const SynthSpec& spec, const DenseMatrix& design,
                             std::size_t index) {
  const auto snr = voxel_snr(spec);
  return generate_subject_from_design(spec, design, index, snr);
}

SynthDataset generate(const SynthSpec& spec) {
  SynthDataset out;
  out.spec = spec;
  out.stimulus = generate_stimulus(spec);
  out.atlas = make_atlas(spec.n_voxels);
  out.subjects.reserve(spec.n_subjects);
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    out.subjects.push_back(generate_subject(spec, out.stimulus.design, i));
  }
  return out;
}

double snr_for_correlation(double r) {
  if (r >= 1.0) return std::numeric_limits<double>::infinity();
  return r * r / (1.0 - r * r);
}

double correlation_for_snr(double snr) {
  if (std::isinf(snr)) return 1.0;
  return std::sqrt(snr / (1.0 + snr));
}

SynthDataset plant_effect(const SynthDataset& a, double delta,
                          std::span<const std::size_t> voxels) {
  if (!std::isfinite(delta) || delta < 0.0) {
    throw ArgumentError("plant_effect: delta must be finite and >= 0");
  }
  const std::size_t n_voxels = a.spec.n_voxels;
  for (std::size_t v : voxels) {
    if (v >= n_voxels) {
      throw IndexError("plant_effect: voxel " + std::to_string(v) + " out of range [0, " +
                       std::to_string(n_voxels) + ")");
    }
  }
  SynthDataset b = a;
  for (auto& subject : b.subjects) {
    std::vector<double> snr = subject.snr;
    for (std::size_t v : voxels) {
      const double r = correlation_for_snr(snr[v]);
      const double boosted = std::min(r + delta, 0.999);
      if (boosted > r) snr[v] = std::max(snr[v], snr_for_correlation(boosted));
    }
    const DenseMatrix signal = matmul(a.stimulus.design, subject.true_weights);
    const DenseMatrix noise = generate_noise(a.spec, subject.subject_id, "noise-b");
    subject.bold.signal = mix_signal_noise(signal, noise, snr);
    subject.snr = std::move(snr);
  }
  return b;
}

void save_dataset(const SynthDataset& data, const std::string& dir,
                  const nlohmann::json& provenance) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root);
  io::save_stimulus_track(data.stimulus.track, root / "stimulus.json");
  io::write_matrix(data.stimulus.design, root / "design.vem");
  io::save_atlas(data.atlas, root / "atlas.vem");
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : data.subjects) {
    const fs::path sub = root / s.subject_id;
    fs::create_directories(sub);
    io::write_matrix(s.bold.signal, sub / "bold.vem");
    io::write_matrix(s.true_weights, sub / "true_weights.vem");
    io::write_matrix(row_vector(s.snr), sub / "snr.vem");
    subjects.push_back({{"subject_id", s.subject_id},
                        {"bold", s.subject_id + "/bold.vem"},
                        {"true_weights", s.subject_id + "/true_weights.vem"}});
  }
  nlohmann::json manifest = {{"tr_s", data.spec.tr_s},
                             {"n_trs", data.spec.n_trs},
                             {"n_voxels", data.spec.n_voxels},
                             {"dim", data.spec.dim},
                             {"stimulus", "stimulus.json"},
                             {"design", "design.vem"},
                             {"atlas", "atlas.vem"},
                             {"subjects", subjects}};
  if (!provenance.is_null()) manifest["provenance"] = provenance;
  std::ofstream out(root / "dataset.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (root / "dataset.json").string());
  out << manifest.dump(2) << "\n";
}

}  // namespace voxelenc::synth
