#include "voxelenc/ridge.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "voxelenc/error.hpp"
#include "voxelenc/parallel.hpp"

namespace voxelenc::ridge {

namespace {

// Fixed block width: results never depend on how blocks map onto workers.
constexpr std::size_t kVoxelBlock = 256;

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

// One column of coordinate descent. `z` is row-major n x d, `x` and `w` are
// column vectors; w is used as the warm start and updated in place.
void lasso_column(const DenseMatrix& z, std::span<const double> col_norm2,
                  std::span<const double> x, double lambda, const LassoOptions& opts,
                  std::vector<double>& w, std::vector<double>& residual) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double fit = 0.0;
    for (std::size_t j = 0; j < d; ++j) fit += z(i, j) * w[j];
    residual[i] = x[i] - fit;
  }
  double delta = std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    delta = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (col_norm2[j] == 0.0) {
        w[j] = 0.0;
        continue;
      }
      double rho = 0.0;
      for (std::size_t i = 0; i < n; ++i) rho += z(i, j) * residual[i];
      rho += col_norm2[j] * w[j];
      const double updated = soft_threshold(rho, lambda) / col_norm2[j];
      const double change = updated - w[j];
      if (change != 0.0) {
        for (std::size_t i = 0; i < n; ++i) residual[i] -= change * z(i, j);
        w[j] = updated;
      }
      delta = std::max(delta, std::abs(change));
    }
    if (delta < opts.tol) return;
  }
  throw ConvergenceError("lasso coordinate descent did not converge in " +
                             std::to_string(opts.max_sweeps) +
                             " sweeps (final delta " + std::to_string(delta) + ")",
                         delta);
}

std::vector<double> column_norms2(const DenseMatrix& z) {
  std::vector<double> out(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) out[j] += z(i, j) * z(i, j);
  }
  return out;
}

}  // namespace

Penalty parse_penalty(const std::string& name) {
  if (name == "l2" || name == "L2") return Penalty::L2;
  if (name == "l1" || name == "L1") return Penalty::L1;
  throw ArgumentError("unknown penalty '" + name + "' (expected l2 or l1)");
}

std::string to_string(Penalty p) { return p == Penalty::L2 ? "l2" : "l1"; }

std::vector<double> default_lambda_grid() {
  std::vector<double> grid(10);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = std::pow(10.0, -2.0 + 8.0 * static_cast<double>(i) / 9.0);
  }
  return grid;
}

void RidgeConfig::validate() const {
  if (lambdas.empty()) throw ArgumentError("ridge: lambdas must be non-empty");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!std::isfinite(lambdas[i]) || lambdas[i] < 0.0) {
      throw ArgumentError("ridge: lambdas[" + std::to_string(i) + "] must be finite and >= 0");
    }
    if (i > 0 && lambdas[i] < lambdas[i - 1]) {
      throw ArgumentError("ridge: lambdas must be sorted ascending (lambdas[" +
                          std::to_string(i) + "])");
    }
  }
}

ColumnStats column_stats(const DenseMatrix& m, bool center, bool scale) {
  const std::size_t n = m.rows();
  const std::size_t c = m.cols();
  ColumnStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 1.0),
                std::vector<bool>(c, false)};
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += m(i, j);
    mean = n > 0 ? mean / static_cast<double>(n) : 0.0;
    double ss = 0.0;
    bool constant = true;
    for (std::size_t i = 0; i < n; ++i) {
      ss += (m(i, j) - mean) * (m(i, j) - mean);
      if (m(i, j) != m(0, j)) constant = false;
    }
    s.constant[j] = constant;
    if (center || scale) s.mean[j] = mean;
    if (scale && !constant && n > 1) s.scale[j] = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

RidgeSolver::RidgeSolver(const DenseMatrix& design, RidgeConfig cfg, std::size_t workers)
    : cfg_(std::move(cfg)), workers_(workers == 0 ? default_workers() : workers) {
  cfg_.validate();
  n_samples_ = design.rows();
  n_features_ = design.cols();
  if (n_samples_ < 2) throw ArgumentError("ridge: need at least 2 samples");
  if (n_features_ < 1) throw ArgumentError("ridge: design has no columns");

  const bool center = cfg_.fit_intercept || cfg_.standardize;
  design_stats_ = column_stats(design, center, cfg_.standardize);
  design_std_ = DenseMatrix(n_samples_, n_features_);
  for (std::size_t i = 0; i < n_samples_; ++i) {
    for (std::size_t j = 0; j < n_features_; ++j) {
      design_std_(i, j) = (design(i, j) - design_stats_.mean[j]) / design_stats_.scale[j];
    }
  }

  if (cfg_.penalty == Penalty::L1) return;

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> zmap(design_std_.data().data(),
                                static_cast<Eigen::Index>(n_samples_),
                                static_cast<Eigen::Index>(n_features_));
  Eigen::MatrixXd zc = zmap;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(zc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto k = static_cast<std::size_t>(svd.singularValues().size());
  sv_.resize(k);
  u_ = DenseMatrix(n_samples_, k);
  v_ = DenseMatrix(n_features_, k);
  for (std::size_t i = 0; i < k; ++i) sv_[i] = svd.singularValues()(static_cast<Eigen::Index>(i));
  for (std::size_t r = 0; r < n_samples_; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      u_(r, i) = svd.matrixU()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
    }
  }
  for (std::size_t r = 0; r < n_features_; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      v_(r, i) = svd.matrixV()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
    }
  }

  const double smax = k > 0 ? sv_[0] : 0.0;
  const double tol = smax * static_cast<double>(std::max(n_samples_, n_features_)) *
                     std::numeric_limits<double>::epsilon();
  rank_ = static_cast<std::size_t>(
      std::count_if(sv_.begin(), sv_.end(), [tol](double s) { return s > tol; }));
  for (double& s : sv_) {
    if (s <= tol) s = 0.0;
  }
  const bool has_zero_lambda = cfg_.lambdas.front() == 0.0;
  if (has_zero_lambda && rank_ < n_features_) {
    const std::size_t null_dim = n_features_ - rank_;
    throw DegenerateSolutionError(
        "ridge: design is rank deficient (rank " + std::to_string(rank_) + " of " +
            std::to_string(n_features_) + " columns, null dimension " +
            std::to_string(null_dim) + "); lambda = 0 has no unique solution",
        null_dim);
  }
}

RidgePath RidgeSolver::solve(const DenseMatrix& targets) const {
  if (targets.rows() != n_samples_) {
    throw ShapeError("ridge: design has " + std::to_string(n_samples_) + " rows, targets " +
                     targets.shape_string());
  }
  const std::size_t n_targets = targets.cols();
  const bool center = cfg_.fit_intercept || cfg_.standardize;
  ColumnStats target_stats = column_stats(targets, center, cfg_.standardize);

  RidgePath path;
  path.lambdas = cfg_.lambdas;
  path.excluded.assign(n_targets, false);
  if (center) {
    for (std::size_t v = 0; v < n_targets; ++v) path.excluded[v] = target_stats.constant[v];
  }
  path.weights.resize(cfg_.lambdas.size());
  for (std::size_t l = 0; l < cfg_.lambdas.size(); ++l) {
    auto& w = path.weights[l];
    w.weights = DenseMatrix(n_features_, n_targets);
    w.intercepts.assign(n_targets, 0.0);
    w.chosen_lambda.assign(n_targets, cfg_.lambdas[l]);
  }

  const std::size_t n_blocks = (n_targets + kVoxelBlock - 1) / kVoxelBlock;
  parallel_for(
      n_blocks,
      [&](std::size_t b) {
        const std::size_t begin = b * kVoxelBlock;
        const std::size_t end = std::min(n_targets, begin + kVoxelBlock);
        solve_block(targets, target_stats, begin, end, path);
      },
      workers_);
  return path;
}

void RidgeSolver::solve_block(const DenseMatrix& targets, const ColumnStats& ts,
                              std::size_t col_begin, std::size_t col_end,
                              RidgePath& path) const {
  const std::size_t width = col_end - col_begin;
  const std::size_t n = n_samples_;
  const std::size_t d = n_features_;

  // standardised target block, n x width
  DenseMatrix xs(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t v = col_begin + c;
      xs(i, c) = path.excluded[v] ? 0.0 : (targets(i, v) - ts.mean[v]) / ts.scale[v];
    }
  }

  auto store = [&](std::size_t l, const DenseMatrix& w_std) {
    auto& out = path.weights[l];
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t v = col_begin + c;
      if (path.excluded[v]) {
        out.intercepts[v] = ts.mean[v];
        continue;
      }
      double offset = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double coef = w_std(j, c) * ts.scale[v] / design_stats_.scale[j];
        out.weights(j, v) = coef;
        offset += design_stats_.mean[j] * coef;
      }
      out.intercepts[v] = ts.mean[v] - offset;
    }
  };

  if (cfg_.penalty == Penalty::L1) {
    const auto norms = column_norms2(design_std_);
    std::vector<double> residual(n);
    std::vector<double> x(n);
    std::vector<DenseMatrix> per_lambda(cfg_.lambdas.size(), DenseMatrix(d, width));
    for (std::size_t c = 0; c < width; ++c) {
      if (path.excluded[col_begin + c]) continue;
      for (std::size_t i = 0; i < n; ++i) x[i] = xs(i, c);
      std::vector<double> w(d, 0.0);
      // descending lambda with warm starts
      for (std::size_t li = cfg_.lambdas.size(); li-- > 0;) {
        lasso_column(design_std_, norms, x, cfg_.lambdas[li], LassoOptions{}, w, residual);
        for (std::size_t j = 0; j < d; ++j) per_lambda[li](j, c) = w[j];
      }
    }
    for (std::size_t l = 0; l < cfg_.lambdas.size(); ++l) store(l, per_lambda[l]);
    return;
  }

  // projection U^T X, accumulated over samples in ascending order
  const std::size_t k = sv_.size();
  DenseMatrix proj(k, width);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xrow = xs.row(i);
    for (std::size_t a = 0; a < k; ++a) {
      const double u = u_(i, a);
      auto prow = proj.row(a);
      for (std::size_t c = 0; c < width; ++c) prow[c] += u * xrow[c];
    }
  }

  DenseMatrix w_std(d, width);
  std::vector<double> factor(k);
  for (std::size_t l = 0; l < cfg_.lambdas.size(); ++l) {
    const double lambda = cfg_.lambdas[l];
    for (std::size_t a = 0; a < k; ++a) {
      const double s = sv_[a];
      factor[a] = s == 0.0 ? 0.0 : s / (s * s + lambda);
    }
    std::fill(w_std.storage().begin(), w_std.storage().end(), 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      auto wrow = w_std.row(j);
      for (std::size_t a = 0; a < k; ++a) {
        const double coef = v_(j, a) * factor[a];
        if (coef == 0.0) continue;
        const auto prow = proj.row(a);
        for (std::size_t c = 0; c < width; ++c) wrow[c] += coef * prow[c];
      }
    }
    store(l, w_std);
  }
}

RidgePath fit_ridge_path(const DenseMatrix& design, const DenseMatrix& targets,
                         const RidgeConfig& cfg, std::size_t workers) {
  if (design.rows() != targets.rows()) {
    throw ShapeError("ridge: design " + design.shape_string() + " and targets " +
                     targets.shape_string() + " disagree on rows");
  }
  if (design.rows() < 2) throw ArgumentError("ridge: need at least 2 samples");
  return RidgeSolver(design, cfg, workers).solve(targets);
}

DenseMatrix predict(const EncoderWeights& w, const DenseMatrix& design) {
  if (design.cols() != w.weights.rows()) {
    throw ShapeError("predict: design " + design.shape_string() + " incompatible with weights " +
                     w.weights.shape_string());
  }
  if (w.intercepts.size() != w.weights.cols()) {
    throw ShapeError("predict: " + std::to_string(w.intercepts.size()) + " intercepts for " +
                     std::to_string(w.weights.cols()) + " targets");
  }
  const std::size_t n = design.rows();
  const std::size_t d = design.cols();
  const std::size_t v = w.weights.cols();
  DenseMatrix out(n, v);
  for (std::size_t i = 0; i < n; ++i) {
    auto orow = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double z = design(i, j);
      const auto wrow = w.weights.row(j);
      for (std::size_t c = 0; c < v; ++c) orow[c] += z * wrow[c];
    }
    for (std::size_t c = 0; c < v; ++c) orow[c] += w.intercepts[c];
  }
  return out;
}

EncoderWeights fit_lasso(const DenseMatrix& design, const DenseMatrix& targets, double lambda,
                         const LassoOptions& opts) {
  if (design.rows() != targets.rows()) {
    throw ShapeError("lasso: design " + design.shape_string() + " and targets " +
                     targets.shape_string() + " disagree on rows");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError("lasso: lambda must be finite and >= 0");
  }
  const std::size_t n = design.rows();
  const std::size_t d = design.cols();
  EncoderWeights out{DenseMatrix(d, targets.cols()), std::vector<double>(targets.cols(), 0.0),
                     std::vector<double>(targets.cols(), lambda)};
  const auto norms = column_norms2(design);
  std::vector<double> residual(n);
  for (std::size_t c = 0; c < targets.cols(); ++c) {
    const auto x = targets.column(c);
    std::vector<double> w(d, 0.0);
    lasso_column(design, norms, x, lambda, opts, w, residual);
    for (std::size_t j = 0; j < d; ++j) out.weights(j, c) = w[j];
  }
  return out;
}

}  // namespace voxelenc::ridge
