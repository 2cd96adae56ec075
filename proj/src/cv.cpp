#include "voxelenc/cv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "voxelenc/error.hpp"
#include "voxelenc/parallel.hpp"
#include "voxelenc/stats.hpp"

namespace voxelenc::cv {

namespace {

constexpr std::size_t kVoxelBlock = 256;
constexpr std::size_t kMinFoldSize = 3;

}  // namespace

FoldScheme parse_fold_scheme(const std::string& name) {
  if (name == "contiguous" || name == "contiguous-blocks") return FoldScheme::ContiguousBlocks;
  if (name == "by-run" || name == "run") return FoldScheme::ByRun;
  throw ArgumentError("unknown fold scheme '" + name + "' (expected contiguous or by-run)");
}

std::string to_string(FoldScheme scheme) {
  return scheme == FoldScheme::ContiguousBlocks ? "contiguous" : "by-run";
}

void FoldPlan::validate() const {
  if (n_folds < 2) throw ArgumentError("fold plan: need at least 2 folds");
  std::vector<std::size_t> sizes(n_folds, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const int f = assignment[i];
    if (f < 0 || static_cast<std::size_t>(f) >= n_folds) {
      throw ArgumentError("fold plan: TR " + std::to_string(i) + " has fold " +
                          std::to_string(f) + " outside [0, " + std::to_string(n_folds) + ")");
    }
    ++sizes[static_cast<std::size_t>(f)];
  }
  for (std::size_t f = 0; f < n_folds; ++f) {
    if (sizes[f] == 0) throw ArgumentError("fold plan: fold " + std::to_string(f) + " is empty");
  }
}

std::vector<std::size_t> FoldPlan::test_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (static_cast<std::size_t>(assignment[i]) == fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::train_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (static_cast<std::size_t>(assignment[i]) != fold) rows.push_back(i);
  }
  return rows;
}

FoldPlan make_folds(std::size_t n_trs, std::size_t n_folds, FoldScheme scheme,
                    std::uint64_t seed, std::span<const int> run_of_tr) {
  if (n_folds < 2) throw ArgumentError("make_folds: n_folds must be >= 2");
  if (n_folds > n_trs) {
    throw ArgumentError("make_folds: n_folds (" + std::to_string(n_folds) + ") > n_trs (" +
                        std::to_string(n_trs) + ")");
  }
  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.scheme = scheme;
  plan.assignment.resize(n_trs);

  if (scheme == FoldScheme::ContiguousBlocks) {
    const std::size_t base = n_trs / n_folds;
    const std::size_t extra = n_trs % n_folds;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < n_folds; ++f) {
      const std::size_t len = base + (f < extra ? 1 : 0);
      for (std::size_t i = 0; i < len; ++i) plan.assignment[pos++] = static_cast<int>(f);
    }
    return plan;
  }

  if (run_of_tr.size() != n_trs) {
    throw ArgumentError("make_folds: by-run scheme needs a run id for each of the " +
                        std::to_string(n_trs) + " TRs");
  }
  std::vector<int> runs;
  for (int r : run_of_tr) {
    if (std::find(runs.begin(), runs.end(), r) == runs.end()) runs.push_back(r);
  }
  if (runs.size() < n_folds) {
    throw ArgumentError("make_folds: " + std::to_string(runs.size()) + " runs cannot fill " +
                        std::to_string(n_folds) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(runs.begin(), runs.end(), rng);
  for (std::size_t i = 0; i < n_trs; ++i) {
    const auto it = std::find(runs.begin(), runs.end(), run_of_tr[i]);
    const auto position = static_cast<std::size_t>(it - runs.begin());
    plan.assignment[i] = static_cast<int>(position % n_folds);
  }
  return plan;
}

ridge::ColumnStats fold_train_stats(const DenseMatrix& bold, const FoldPlan& plan,
                                    std::size_t fold, const ridge::RidgeConfig& cfg) {
  const auto rows = plan.train_rows(fold);
  return ridge::column_stats(bold.select_rows(rows), cfg.fit_intercept || cfg.standardize,
                             cfg.standardize);
}

CvReport cross_validate(const DenseMatrix& design, const DenseMatrix& bold, const FoldPlan& plan,
                        const ridge::RidgeConfig& cfg, const CvOptions& opts) {
  cfg.validate();
  plan.validate();
  if (design.rows() != bold.rows() || plan.assignment.size() != bold.rows()) {
    throw ShapeError("cross_validate: design " + design.shape_string() + ", bold " +
                     bold.shape_string() + " and fold plan (" +
                     std::to_string(plan.assignment.size()) + " TRs) disagree");
  }
  const std::size_t n_folds = plan.n_folds;
  const std::size_t n_lambdas = cfg.lambdas.size();
  const std::size_t n_trs = bold.rows();
  const std::size_t n_voxels = bold.cols();

  std::vector<std::vector<std::size_t>> test_rows(n_folds);
  std::vector<std::vector<std::size_t>> train_rows(n_folds);
  for (std::size_t f = 0; f < n_folds; ++f) {
    test_rows[f] = plan.test_rows(f);
    train_rows[f] = plan.train_rows(f);
    if (test_rows[f].size() < kMinFoldSize) {
      throw ArgumentError("cross_validate: fold " + std::to_string(f) + " has " +
                          std::to_string(test_rows[f].size()) +
                          " TRs; Pearson needs at least 3");
    }
  }

  CvReport report;
  report.lambdas = cfg.lambdas;
  report.r.assign(n_voxels, 0.0);
  report.chosen_lambda.assign(n_voxels, std::numeric_limits<double>::quiet_NaN());
  report.per_fold_r = DenseMatrix(n_folds, n_voxels);
  report.excluded.assign(n_voxels, false);
  if (opts.keep_predictions) report.predictions = DenseMatrix(n_trs, n_voxels);

  const auto overall = ridge::column_stats(bold, true, false);
  std::vector<std::size_t> included;
  for (std::size_t v = 0; v < n_voxels; ++v) {
    report.excluded[v] = overall.constant[v];
    if (!report.excluded[v]) included.push_back(v);
  }

  std::vector<std::unique_ptr<ridge::RidgeSolver>> solvers;
  std::vector<DenseMatrix> test_design;
  for (std::size_t f = 0; f < n_folds; ++f) {
    solvers.push_back(std::make_unique<ridge::RidgeSolver>(design.select_rows(train_rows[f]),
                                                           cfg, 1));
    test_design.push_back(design.select_rows(test_rows[f]));
  }

  const std::size_t n_blocks = (included.size() + kVoxelBlock - 1) / kVoxelBlock;
  parallel_for(
      n_blocks,
      [&](std::size_t b) {
        const std::size_t begin = b * kVoxelBlock;
        const std::size_t end = std::min(included.size(), begin + kVoxelBlock);
        const std::span<const std::size_t> cols(included.data() + begin, end - begin);
        const std::size_t width = cols.size();
        const DenseMatrix block = bold.select_cols(cols);

        // out-of-fold predictions per lambda, and fold-level r per lambda
        std::vector<DenseMatrix> oof(n_lambdas, DenseMatrix(n_trs, width));
        std::vector<double> fold_r(n_folds * n_lambdas * width, 0.0);
        auto fold_r_at = [&](std::size_t f, std::size_t l, std::size_t c) -> double& {
          return fold_r[(f * n_lambdas + l) * width + c];
        };

        std::vector<double> measured;
        std::vector<double> predicted;
        for (std::size_t f = 0; f < n_folds; ++f) {
          const DenseMatrix train = block.select_rows(train_rows[f]);
          const DenseMatrix test = block.select_rows(test_rows[f]);
          const auto path = solvers[f]->solve(train);
          for (std::size_t l = 0; l < n_lambdas; ++l) {
            const DenseMatrix pred = ridge::predict(path.weights[l], test_design[f]);
            for (std::size_t i = 0; i < test_rows[f].size(); ++i) {
              for (std::size_t c = 0; c < width; ++c) oof[l](test_rows[f][i], c) = pred(i, c);
            }
            for (std::size_t c = 0; c < width; ++c) {
              measured = test.column(c);
              predicted = pred.column(c);
              fold_r_at(f, l, c) = stats::pearson(predicted, measured).value_or(0.0);
            }
          }
        }

        for (std::size_t c = 0; c < width; ++c) {
          const std::size_t v = cols[c];
          std::size_t best = 0;
          double best_score = -std::numeric_limits<double>::infinity();
          for (std::size_t l = 0; l < n_lambdas; ++l) {
            double score = 0.0;
            for (std::size_t f = 0; f < n_folds; ++f) score += fold_r_at(f, l, c);
            score /= static_cast<double>(n_folds);
            if (score > best_score) {
              best_score = score;
              best = l;
            }
          }
          report.chosen_lambda[v] = cfg.lambdas[best];
          for (std::size_t f = 0; f < n_folds; ++f) {
            report.per_fold_r(f, v) = fold_r_at(f, best, c);
          }
          measured = block.column(c);
          predicted = oof[best].column(c);
          report.r[v] = stats::pearson(predicted, measured).value_or(0.0);
          if (opts.keep_predictions) report.predictions.set_column(v, predicted);
        }
      },
      opts.workers);
  return report;
}

}  // namespace voxelenc::cv
