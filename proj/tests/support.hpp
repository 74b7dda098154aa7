#pragma once

// Small data builders shared by the unit tests.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metacate/core.hpp"
#include "metacate/meta.hpp"

namespace testsupport {

using metacate::CovariateProfile;
using metacate::MetaInput;
using metacate::TrialDataset;

// n rows with p standard-normal covariates, alternating treatment so both
// arms are balanced, and y = f(x, a) + noise_sd * N(0, 1).
inline TrialDataset make_trial(std::size_t n, std::size_t p, std::uint64_t seed,
                               const std::function<double(const Eigen::VectorXd&, int)>& f,
                               double noise_sd = 0.0, int study_id = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrialDataset d;
  d.study_id = study_id;
  for (std::size_t j = 0; j < p; ++j) d.covariate_names.push_back("x" + std::to_string(j + 1));
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  d.y.resize(n);
  d.a.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = normal(rng);
    }
    d.a[i] = static_cast<int>(i % 2);
    const Eigen::VectorXd x = d.x.row(static_cast<Eigen::Index>(i)).transpose();
    d.y[i] = f(x, d.a[i]) + noise_sd * normal(rng);
  }
  return d;
}

inline std::vector<CovariateProfile> random_profiles(std::size_t count, std::size_t p,
                                                     std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<CovariateProfile> out;
  for (std::size_t i = 0; i < count; ++i) {
    CovariateProfile profile{static_cast<int>(i + 1), Eigen::VectorXd(static_cast<Eigen::Index>(p))};
    for (std::size_t j = 0; j < p; ++j) profile.x(static_cast<Eigen::Index>(j)) = normal(rng);
    out.push_back(profile);
  }
  return out;
}

inline MetaInput meta_input(const std::vector<double>& tau, const std::vector<double>& v,
                            int profile_id = 1) {
  MetaInput in;
  in.profile_id = profile_id;
  for (std::size_t s = 0; s < tau.size(); ++s) {
    in.estimates.push_back({static_cast<int>(s + 1), profile_id, tau[s], v[s]});
  }
  return in;
}

}  // namespace testsupport
