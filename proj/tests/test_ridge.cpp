#include <cmath>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/ridge.hpp"

using namespace voxelenc;

namespace {

double max_diff(const ridge::EncoderWeights& w, const oracle::RidgeSolution& s) {
  double m = 0.0;
  for (std::size_t j = 0; j < w.weights.rows(); ++j)
    for (std::size_t v = 0; v < w.weights.cols(); ++v)
      m = std::max(m, std::abs(w.weights(j, v) - s.w(j, v)));
  for (std::size_t v = 0; v < w.intercepts.size(); ++v)
    m = std::max(m, std::abs(w.intercepts[v] - s.b(v)));
  return m;
}

double lasso_objective(const DenseMatrix& z, const std::vector<double>& x,
                       const std::vector<double>& w, double lambda) {
  double rss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double r = x[i];
    for (std::size_t j = 0; j < z.cols(); ++j) r -= z(i, j) * w[j];
    rss += r * r;
  }
  double l1 = 0.0;
  for (double v : w) l1 += std::abs(v);
  return 0.5 * rss + lambda * l1;
}

}  // namespace

TEST_CASE("SVD path matches the normal equations on random instances") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> ne(12, 50), nd(1, 10), nv(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = nd(rng);
    const std::size_t n = std::max<std::size_t>(ne(rng), d + 2);
    const auto z = oracle::random_matrix(n, d, rng);
    const auto x = oracle::random_matrix(n, nv(rng), rng, 3.0);
    ridge::RidgeConfig cfg;
    cfg.lambdas = {0.0, 0.1, 1.0, 10.0, 1000.0};
    cfg.standardize = trial % 3 != 0;
    cfg.fit_intercept = trial % 2 == 0;
    const auto path = ridge::fit_ridge_path(z, x, cfg);
    for (std::size_t l = 0; l < cfg.lambdas.size(); ++l) {
      const auto ref =
          oracle::ridge_normal_equations(z, x, cfg.lambdas[l], cfg.standardize, cfg.fit_intercept);
      CHECK(max_diff(path.weights[l], ref) < 1e-8);
    }
  }
}

TEST_CASE("more samples than features is not required once lambda > 0") {
  std::mt19937_64 rng(7);
  const auto z = oracle::random_matrix(6, 10, rng);
  const auto x = oracle::random_matrix(6, 2, rng);
  ridge::RidgeConfig cfg;
  cfg.lambdas = {0.5, 5.0};
  const auto path = ridge::fit_ridge_path(z, x, cfg);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(max_diff(path.weights[l], oracle::ridge_normal_equations(z, x, cfg.lambdas[l], true, true)) <
          1e-8);
  }
}

TEST_CASE("rank-deficient design without a penalty is degenerate") {
  std::mt19937_64 rng(9);
  auto z = oracle::random_matrix(20, 3, rng);
  for (std::size_t i = 0; i < 20; ++i) z(i, 2) = z(i, 0) + z(i, 1);
  ridge::RidgeConfig cfg;
  cfg.lambdas = {0.0, 1.0};
  cfg.standardize = false;
  cfg.fit_intercept = false;
  try {
    ridge::fit_ridge_path(z, oracle::random_matrix(20, 1, rng), cfg);
    FAIL("expected DegenerateSolutionError");
  } catch (const DegenerateSolutionError& e) {
    CHECK(e.null_dimension() == 1);
    CHECK_FALSE(e.is_validation());
  }
  cfg.lambdas = {1.0};
  CHECK_NOTHROW(ridge::fit_ridge_path(z, oracle::random_matrix(20, 1, rng), cfg));
}

TEST_CASE("zero-variance targets are excluded, not fitted") {
  std::mt19937_64 rng(4);
  const auto z = oracle::random_matrix(15, 3, rng);
  auto x = oracle::random_matrix(15, 3, rng);
  for (std::size_t i = 0; i < 15; ++i) x(i, 1) = 4.5;
  ridge::RidgeConfig cfg;
  cfg.lambdas = {1.0};
  const auto path = ridge::fit_ridge_path(z, x, cfg);
  CHECK(path.excluded == std::vector<bool>{false, true, false});
  for (std::size_t j = 0; j < 3; ++j) CHECK(path.weights[0].weights(j, 1) == 0.0);
  CHECK(path.weights[0].intercepts[1] == 4.5);
}

TEST_CASE("weight norm shrinks as lambda grows") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z = oracle::random_matrix(40, 5, rng);
    const auto x = oracle::random_matrix(40, 3, rng);
    ridge::RidgeConfig cfg;
    const auto path = ridge::fit_ridge_path(z, x, cfg);
    for (std::size_t v = 0; v < 3; ++v) {
      double prev = INFINITY;
      for (const auto& w : path.weights) {
        double norm = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          // compare in standardised units, where the penalty acts
          double sd = 0.0, mean = 0.0;
          for (std::size_t i = 0; i < 40; ++i) mean += z(i, j) / 40.0;
          for (std::size_t i = 0; i < 40; ++i) sd += (z(i, j) - mean) * (z(i, j) - mean) / 39.0;
          norm += std::pow(w.weights(j, v) * std::sqrt(sd), 2);
        }
        CHECK(norm <= prev * (1.0 + 1e-12));
        prev = norm;
      }
    }
  }
}

TEST_CASE("worker count does not change the result") {
  std::mt19937_64 rng(8);
  const auto z = oracle::random_matrix(60, 6, rng);
  const auto x = oracle::random_matrix(60, 37, rng);
  const ridge::RidgeConfig cfg;
  const auto a = ridge::fit_ridge_path(z, x, cfg, 1);
  const auto b = ridge::fit_ridge_path(z, x, cfg, 4);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l].weights == b.weights[l].weights);
    CHECK(a.weights[l].intercepts == b.weights[l].intercepts);
  }
}

TEST_CASE("predict is Z W plus the intercept") {
  ridge::EncoderWeights w{DenseMatrix(2, 2, {1, 2, 3, 4}), {0.5, -1.0}, {1.0, 1.0}};
  const DenseMatrix z(3, 2, {1, 0, 0, 1, 1, 1});
  const auto y = ridge::predict(w, z);
  CHECK(y(0, 0) == 1.5);
  CHECK(y(1, 1) == 3.0);
  CHECK(y(2, 0) == 4.5);
  CHECK(y(2, 1) == 5.0);
  CHECK_THROWS_AS(ridge::predict(w, DenseMatrix(3, 3)), ShapeError);
}

TEST_CASE("ridge configuration checks") {
  ridge::RidgeConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lambdas.size() == 10);
  CHECK(cfg.lambdas.front() == doctest::Approx(1e-2));
  CHECK(cfg.lambdas.back() == doctest::Approx(1e6));
  cfg.lambdas = {1.0, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg.lambdas = {-1.0};
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg.lambdas = {};
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  CHECK_THROWS_AS(ridge::parse_penalty("l3"), ArgumentError);
  CHECK(ridge::parse_penalty("l1") == ridge::Penalty::L1);
}

TEST_CASE("shape mismatches are reported") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(ridge::fit_ridge_path(oracle::random_matrix(10, 2, rng),
                                        oracle::random_matrix(9, 2, rng), ridge::RidgeConfig{}),
                  ShapeError);
}

TEST_CASE("lasso satisfies the subgradient conditions") {
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> ne(10, 40), nd(1, 8);
  std::uniform_real_distribution<double> lam(0.01, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = ne(rng);
    const std::size_t d = nd(rng);
    const auto z = oracle::random_matrix(n, d, rng);
    const auto x = oracle::random_matrix(n, 2, rng, 2.0);
    const double lambda = lam(rng);
    const auto fit = ridge::fit_lasso(z, x, lambda, {1e-12, 100000});
    for (std::size_t v = 0; v < 2; ++v) {
      std::vector<double> w(d), target = x.column(v);
      for (std::size_t j = 0; j < d; ++j) w[j] = fit.weights(j, v);
      for (std::size_t j = 0; j < d; ++j) {
        double g = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double r = target[i];
          for (std::size_t k = 0; k < d; ++k) r -= z(i, k) * w[k];
          g += z(i, j) * r;
        }
        if (w[j] != 0.0) {
          CHECK(std::abs(g - lambda * (w[j] > 0 ? 1.0 : -1.0)) < 1e-6);
        } else {
          CHECK(std::abs(g) <= lambda + 1e-6);
        }
      }
      // no worse than W = 0 or the matching ridge solution
      const double obj = lasso_objective(z, target, w, lambda);
      CHECK(obj <= lasso_objective(z, target, std::vector<double>(d, 0.0), lambda) + 1e-12);
      const auto l2 = oracle::ridge_normal_equations(z, x, lambda, false, false);
      std::vector<double> wr(d);
      for (std::size_t j = 0; j < d; ++j) wr[j] = l2.w(j, v);
      CHECK(obj <= lasso_objective(z, target, wr, lambda) + 1e-12);
    }
  }
}

TEST_CASE("lasso is zero once lambda exceeds the largest correlation") {
  std::mt19937_64 rng(3);
  const auto z = oracle::random_matrix(30, 4, rng);
  const auto x = oracle::random_matrix(30, 1, rng);
  double gmax = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < 30; ++i) g += z(i, j) * x(i, 0);
    gmax = std::max(gmax, std::abs(g));
  }
  const auto fit = ridge::fit_lasso(z, x, gmax * 1.001);
  for (std::size_t j = 0; j < 4; ++j) CHECK(fit.weights(j, 0) == 0.0);
  CHECK_THROWS_AS(ridge::fit_lasso(z, x, -1.0), ArgumentError);
}

TEST_CASE("lasso that cannot converge reports its last change") {
  std::mt19937_64 rng(3);
  const auto z = oracle::random_matrix(30, 6, rng);
  const auto x = oracle::random_matrix(30, 1, rng);
  try {
    ridge::fit_lasso(z, x, 1e-3, {1e-300, 1});
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.final_delta() > 0.0);
  }
}

TEST_CASE("L1 penalty through the path API shrinks to zero for large lambda") {
  std::mt19937_64 rng(12);
  const auto z = oracle::random_matrix(40, 5, rng);
  const auto x = oracle::random_matrix(40, 2, rng);
  ridge::RidgeConfig cfg;
  cfg.penalty = ridge::Penalty::L1;
  cfg.lambdas = {0.1, 1e6};
  const auto path = ridge::fit_ridge_path(z, x, cfg);
  for (std::size_t j = 0; j < 5; ++j) CHECK(path.weights[1].weights(j, 0) == 0.0);
  double nz = 0.0;
  for (std::size_t j = 0; j < 5; ++j) nz += std::abs(path.weights[0].weights(j, 0));
  CHECK(nz > 0.0);
}
