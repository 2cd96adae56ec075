#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxelenc/io.hpp"

namespace voxelenc::cv {
struct CvReport;
}

namespace voxelenc::stats {

// Sample Pearson correlation. nullopt when either input has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

// Spearman rank correlation with average ranks for ties.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

// Regularised incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);

// Two-sided tail probability P(|T| >= |t|).
double student_t_two_sided_p(double t, double df);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

// Paired t-test on d = a - b, two-sided.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

struct FdrResult {
  std::vector<bool> reject;
  std::vector<double> q;
};

// Benjamini-Hochberg step-up.
FdrResult fdr_bh(std::span<const double> p, double alpha);

enum class Sidedness { TwoSided, AGreater, BGreater };

struct CompareOptions {
  double alpha = 0.05;
  bool fisher_z = false;
};

struct GroupStatMap {
  std::vector<double> t;
  std::vector<double> p;
  std::vector<double> q;
  std::vector<bool> reject;
  // +1 where A > B (t > 0), -1 where B > A, 0 for t == 0.
  std::vector<std::int8_t> direction;
  std::size_t df = 0;
  Sidedness sidedness = Sidedness::TwoSided;
  double alpha = 0.05;
  // Voxels where every subject shows the same non-zero difference.
  std::size_t degenerate_voxels = 0;
};

// Per-voxel paired t-test of map A against map B across subjects, then BH
// over all voxels. Maps are indexed [subject][voxel].
GroupStatMap compare_models(const std::vector<std::vector<double>>& maps_a,
                            const std::vector<std::vector<double>>& maps_b,
                            const CompareOptions& opts = {});

GroupStatMap compare_models(std::span<const cv::CvReport> reports_a,
                            std::span<const cv::CvReport> reports_b,
                            const CompareOptions& opts = {});

struct NetworkStat {
  int code = 0;
  std::string name;
  std::size_t n_voxels = 0;  // voxels carrying this label
  std::size_t n_scored = 0;  // of those, voxels not excluded
  std::optional<double> mean;
  std::optional<double> std;  // sample sd over scored voxels
};

struct RoiSummary {
  std::vector<NetworkStat> networks;  // ascending code order
};

RoiSummary summarize_roi(std::span<const double> r, const std::vector<bool>& excluded,
                         const io::RoiAtlas& atlas);
RoiSummary summarize_roi(const cv::CvReport& report, const io::RoiAtlas& atlas);

}  // namespace voxelenc::stats
