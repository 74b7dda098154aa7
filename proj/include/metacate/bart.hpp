#pragma once

// BART S-learner: one sum-of-trees model over (x, a), sampled by Bayesian
// backfitting. The posterior function is recorded at (x*, 0) and (x*, 1)
// for every registered profile, so CATE draws are differences of columns.

#include <array>
#include <cstdint>
#include <map>
#include <span>

#include <Eigen/Dense>

#include "metacate/core.hpp"

namespace metacate {

struct BartParams {
  int n_trees = 50;
  int n_burn = 500;
  int n_draws = 1000;
  double alpha = 0.95;  // tree prior: P(split at depth d) = alpha (1 + d)^-beta
  double beta = 2.0;
  double k = 2.0;       // leaf prior sd = 0.5 / (k sqrt(n_trees)) on the scaled outcome
  double nu = 3.0;      // sigma^2 ~ nu lambda / chi2_nu
  double q = 0.90;      // P(sigma < sigma_hat) under the prior
  std::uint64_t seed = 0;

  void validate() const;
};

/// Posterior draws of f(x, a) in outcome units.
class BartPosterior {
 public:
  // Column pair (a = 0, a = 1) per registered profile.
  using Registry = std::map<int, std::array<Eigen::Index, 2>>;

  BartPosterior() = default;
  BartPosterior(Eigen::MatrixXd draws, Registry registry, double y_min, double y_max);

  const Eigen::MatrixXd& draws() const { return draws_; }
  const Registry& registry() const { return registry_; }
  Eigen::Index n_draws() const { return draws_.rows(); }
  double y_min() const { return y_min_; }
  double y_max() const { return y_max_; }

  /// Throws EstimationError for a profile that was not registered at fit time.
  Eigen::VectorXd arm_draws(int profile_id, int arm) const;

 private:
  Eigen::MatrixXd draws_;  // n_draws x n_eval_points
  Registry registry_;
  double y_min_ = 0.0;
  double y_max_ = 0.0;
};

BartPosterior fit_bart_slearner(const TrialDataset& dataset,
                                std::span<const CovariateProfile> profiles,
                                const BartParams& params);

/// Normal-approximation summary: difference of arm posterior means, with the
/// sum of the two arm posterior variances (divisor n - 1) as se2.
StudyCateEstimate bart_cate_normal(const BartPosterior& posterior, const CovariateProfile& profile,
                                   int study_id = 0);

struct BartQuantileInterval {
  double tau_hat = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Mean and equal-tailed quantiles of the per-draw differences, with linear
/// interpolation between order statistics.
BartQuantileInterval bart_cate_quantile(const BartPosterior& posterior,
                                        const CovariateProfile& profile, double level);

/// Quantile of `values` at probability `prob` (linear interpolation between
/// order statistics).
double interpolated_quantile(std::span<const double> sorted_values, double prob);

}  // namespace metacate
