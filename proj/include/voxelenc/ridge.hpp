#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "voxelenc/matrix.hpp"

namespace voxelenc::ridge {

enum class Penalty { L2, L1 };

Penalty parse_penalty(const std::string& name);
std::string to_string(Penalty p);

// 10 points log-spaced over [1e-2, 1e6].
std::vector<double> default_lambda_grid();

struct RidgeConfig {
  std::vector<double> lambdas = default_lambda_grid();
  Penalty penalty = Penalty::L2;
  bool standardize = true;
  bool fit_intercept = true;

  void validate() const;
};

struct EncoderWeights {
  DenseMatrix weights;              // N_D x N_V, in the units of the inputs
  std::vector<double> intercepts;   // N_V
  std::vector<double> chosen_lambda;  // N_V
};

struct RidgePath {
  std::vector<double> lambdas;
  std::vector<EncoderWeights> weights;  // one entry per lambda
  // Zero-variance targets. They are not fitted: weights 0, intercept = mean.
  std::vector<bool> excluded;
};

struct ColumnStats {
  std::vector<double> mean;   // 0 when not centering
  std::vector<double> scale;  // 1 when not scaling; sample sd otherwise
  std::vector<bool> constant;
};

// Per-column statistics used for standardisation. A constant column gets
// scale 1 and constant = true.
ColumnStats column_stats(const DenseMatrix& m, bool center, bool scale);

struct LassoOptions {
  double tol = 1e-8;
  std::size_t max_sweeps = 10000;
};

// Holds one thin SVD of the (standardised) design so that every lambda and
// every target column reuses it: W(lambda) = V diag(s / (s^2 + lambda)) U^T X.
class RidgeSolver {
 public:
  RidgeSolver(const DenseMatrix& design, RidgeConfig cfg, std::size_t workers = 1);

  RidgePath solve(const DenseMatrix& targets) const;

  const RidgeConfig& config() const noexcept { return cfg_; }
  const ColumnStats& design_stats() const noexcept { return design_stats_; }
  const std::vector<double>& singular_values() const noexcept { return sv_; }
  std::size_t rank() const noexcept { return rank_; }
  std::size_t n_features() const noexcept { return n_features_; }
  std::size_t n_samples() const noexcept { return n_samples_; }

 private:
  void solve_block(const DenseMatrix& targets, const ColumnStats& target_stats,
                   std::size_t col_begin, std::size_t col_end, RidgePath& path) const;

  RidgeConfig cfg_;
  std::size_t workers_;
  std::size_t n_samples_ = 0;
  std::size_t n_features_ = 0;
  std::size_t rank_ = 0;
  ColumnStats design_stats_;
  DenseMatrix design_std_;  // kept for the L1 path
  DenseMatrix u_;           // N_E x k
  DenseMatrix v_;           // N_D x k
  std::vector<double> sv_;  // k
};

RidgePath fit_ridge_path(const DenseMatrix& design, const DenseMatrix& targets,
                         const RidgeConfig& cfg, std::size_t workers = 1);

// Z * W + intercept broadcast over rows.
DenseMatrix predict(const EncoderWeights& w, const DenseMatrix& design);

// Coordinate descent for 1/2 ||Z w - x||^2 + lambda ||w||_1, column by column,
// on the inputs as given (no centering or scaling).
EncoderWeights fit_lasso(const DenseMatrix& design, const DenseMatrix& targets, double lambda,
                         const LassoOptions& opts = {});

}  // namespace voxelenc::ridge
