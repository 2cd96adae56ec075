#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "voxelenc/matrix.hpp"
#include "voxelenc/ridge.hpp"

namespace voxelenc::cv {

enum class FoldScheme { ContiguousBlocks, ByRun };

FoldScheme parse_fold_scheme(const std::string& name);
std::string to_string(FoldScheme scheme);

struct FoldPlan {
  std::size_t n_folds = 5;
  std::vector<int> assignment;  // fold index per TR
  FoldScheme scheme = FoldScheme::ContiguousBlocks;

  void validate() const;
  std::vector<std::size_t> test_rows(std::size_t fold) const;
  std::vector<std::size_t> train_rows(std::size_t fold) const;
};

// contiguous: the TR axis is cut into n_folds segments, the first
// (n_trs % n_folds) one TR longer. by-run: whole runs (given per TR in
// run_of_tr) are shuffled with the seed and dealt round-robin to folds.
FoldPlan make_folds(std::size_t n_trs, std::size_t n_folds, FoldScheme scheme,
                    std::uint64_t seed, std::span<const int> run_of_tr = {});

struct CvReport {
  std::vector<double> lambdas;
  std::vector<double> r;              // pooled out-of-fold Pearson per voxel
  std::vector<double> chosen_lambda;  // NaN where excluded
  DenseMatrix per_fold_r;             // n_folds x N_V at the chosen lambda
  std::vector<bool> excluded;         // zero-variance voxels, scored as r = 0
  DenseMatrix predictions;            // N_E x N_V, only with keep_predictions
};

struct CvOptions {
  std::size_t workers = 0;
  bool keep_predictions = false;
};

CvReport cross_validate(const DenseMatrix& design, const DenseMatrix& bold, const FoldPlan& plan,
                        const ridge::RidgeConfig& cfg, const CvOptions& opts = {});

// Standardisation statistics of the targets for one fold's training rows,
// exactly as the fold's fit sees them.
ridge::ColumnStats fold_train_stats(const DenseMatrix& bold, const FoldPlan& plan,
                                    std::size_t fold, const ridge::RidgeConfig& cfg);

}  // namespace voxelenc::cv
