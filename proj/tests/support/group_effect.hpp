#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

#include "voxelenc/cv.hpp"
#include "voxelenc/stats.hpp"
#include "voxelenc/synth.hpp"

namespace test {

// Planted group difference: model B gains `delta` correlation at ten voxels.
struct GroupEffectSetup {
  std::size_t n_subjects = 12;
  std::size_t n_voxels = 200;
  std::size_t n_trs = 800;
  std::size_t dim = 8;
  double baseline_r = 0.5;
  double delta = 0.15;
  std::size_t n_folds = 5;
  double alpha = 0.05;
  std::uint64_t seed = 1000;

  std::vector<std::size_t> planted() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < 10; ++v) out.push_back(v * (n_voxels / 10) + 3);
    return out;
  }

  nlohmann::json to_json() const {
    return {{"n_subjects", n_subjects}, {"n_voxels", n_voxels}, {"n_trs", n_trs},
            {"dim", dim},               {"baseline_r", baseline_r}, {"delta", delta},
            {"n_folds", n_folds},       {"alpha", alpha},       {"seed", seed},
            {"planted", planted()}};
  }

  static GroupEffectSetup from_json(const nlohmann::json& j) {
    GroupEffectSetup s;
    s.n_subjects = j.at("n_subjects");
    s.n_voxels = j.at("n_voxels");
    s.n_trs = j.at("n_trs");
    s.dim = j.at("dim");
    s.baseline_r = j.at("baseline_r");
    s.delta = j.at("delta");
    s.n_folds = j.at("n_folds");
    s.alpha = j.at("alpha");
    s.seed = j.at("seed");
    return s;
  }
};

struct GroupEffectOutcome {
  double jaccard = 0.0;
  std::size_t rejected = 0;
  bool directions_ok = true;  // every planted rejection points to B > A
};

inline GroupEffectOutcome run_group_effect(const GroupEffectSetup& s, std::uint64_t seed) {
  using namespace voxelenc;
  synth::SynthSpec spec;
  spec.n_subjects = s.n_subjects;
  spec.n_voxels = s.n_voxels;
  spec.n_trs = s.n_trs;
  spec.dim = s.dim;
  spec.snr = {synth::snr_for_correlation(s.baseline_r)};
  spec.seed = seed;
  const auto a = synth::generate(spec);
  const auto planted = s.planted();
  const auto b = synth::plant_effect(a, s.delta, planted);
  const auto plan = cv::make_folds(s.n_trs, s.n_folds, cv::FoldScheme::ContiguousBlocks, 0);
  const ridge::RidgeConfig rc;
  std::vector<cv::CvReport> ra, rb;
  for (std::size_t i = 0; i < s.n_subjects; ++i) {
    ra.push_back(cv::cross_validate(a.stimulus.design, a.subjects[i].bold.signal, plan, rc));
    rb.push_back(cv::cross_validate(b.stimulus.design, b.subjects[i].bold.signal, plan, rc));
  }
  stats::CompareOptions opts;
  opts.alpha = s.alpha;
  const auto g = stats::compare_models(std::span<const cv::CvReport>(ra),
                                       std::span<const cv::CvReport>(rb), opts);
  std::vector<bool> is_planted(s.n_voxels, false);
  for (auto v : planted) is_planted[v] = true;
  GroupEffectOutcome out;
  std::size_t both = 0, either = 0;
  for (std::size_t v = 0; v < s.n_voxels; ++v) {
    if (g.reject[v]) ++out.rejected;
    if (g.reject[v] && is_planted[v]) {
      ++both;
      if (g.direction[v] != -1) out.directions_ok = false;
    }
    if (g.reject[v] || is_planted[v]) ++either;
  }
  out.jaccard = either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
  return out;
}

}  // namespace test
