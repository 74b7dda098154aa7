#pragma once

// Parametric Stage 1: OLS with treatment-by-moderator interactions.
//
//   E[Y] = b0 + b1' X + b2 A + b3' X_mod A
//
// The CATE at a profile x* is b2 + b3' x*_mod.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metacate/core.hpp"

namespace metacate {

/// Singular values below this fraction of the largest one count as zero.
inline constexpr double kRankTolerance = 1e-10;

struct LinearCateFit {
  // Order: intercept, p main effects, treatment, one interaction per moderator.
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;
  std::vector<std::size_t> moderator_indices;  // 0-based covariate indices
  std::size_t n_covariates = 0;
  double sigma2 = 0.0;
  std::vector<std::string> coefficient_names;

  Eigen::Index treatment_index() const { return static_cast<Eigen::Index>(n_covariates + 1); }
};

struct LeastSquaresSolution {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd xtx_inverse;  // (X'X)^-1 from the SVD, symmetrized
  double rss = 0.0;
};

std::vector<std::size_t> all_moderators(std::size_t p);

/// Design matrix [1, X, A, A * X_mod] with matching column names.
Eigen::MatrixXd interaction_design(const TrialDataset& dataset,
                                   std::span<const std::size_t> moderators,
                                   std::vector<std::string>* column_names = nullptr);

/// SVD least squares. Throws EstimationError naming the first column that
/// does not raise the numerical rank.
LeastSquaresSolution solve_least_squares(const Eigen::MatrixXd& design,
                                         const Eigen::VectorXd& y,
                                         std::span<const std::string> column_names);

/// Requires n > number of coefficients; the residual variance is RSS / (n - q).
LinearCateFit fit_interaction_ols(const TrialDataset& dataset,
                                  std::span<const std::size_t> moderators);

StudyCateEstimate linear_cate(const LinearCateFit& fit, const CovariateProfile& profile,
                              int study_id = 0);

}  // namespace metacate
