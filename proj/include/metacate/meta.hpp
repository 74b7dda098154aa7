#pragma once

// Stage 2: random-effects pooling of per-study CATE estimates and prediction
// intervals for the CATE in a new setting.

#include <vector>

#include "metacate/core.hpp"

namespace metacate {

/// K per-study estimates for one covariate profile.
struct MetaInput {
  int profile_id = 0;
  std::vector<StudyCateEstimate> estimates;

  std::size_t k() const { return estimates.size(); }
};

/// Throws DomainError unless K >= 2, every estimate shares profile_id, and
/// every se2 is finite and non-negative.
void check_meta_input(const MetaInput& input);

/// Restricted log-likelihood of the between-study variance, up to an
/// additive constant:
///   -1/2 sum log(v_s + t) - 1/2 log(sum 1/(v_s + t))
///   - 1/2 sum (tau_s - mu(t))^2 / (v_s + t)
/// where mu(t) is the weighted mean at t.
double restricted_log_likelihood(double theta2, const MetaInput& input);

/// REML estimate of theta^2 on [0, 10 Var(tau_s) + max v_s]. The search
/// bound is doubled once if the maximizer sits on it; a second hit throws
/// EstimationError.
double reml_theta2(const MetaInput& input);

/// DerSimonian-Laird moment estimator. Throws DomainError when any se2 is 0.
double dl_theta2(const MetaInput& input);

PooledCate pool_cate(const MetaInput& input, double theta2);

/// Half-width t_{K-2, 1-alpha/2} * sqrt(var_pooled + theta2). Throws
/// EstimationError when k_studies < 3.
PredictionInterval prediction_interval(const PooledCate& pooled, double alpha,
                                       int k_studies);

inline constexpr double kDefaultAlpha = 0.05;

}  // namespace metacate
