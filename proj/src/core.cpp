#include "metacate/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace metacate {

std::size_t TrialDataset::count_arm(int arm) const {
  return static_cast<std::size_t>(std::count(a.begin(), a.end(), arm));
}

ValidationReport validate_trial(const TrialDataset& dataset) {
  ValidationReport report;
  report.study_id = dataset.study_id;
  auto add = [&report](ViolationKind kind, std::optional<std::size_t> row,
                       std::string message) {
    report.violations.push_back({kind, row, std::move(message)});
  };

  const std::size_t n = dataset.y.size();
  const std::size_t p = dataset.dim();
  if (dataset.a.size() != n || static_cast<std::size_t>(dataset.x.rows()) != n) {
    std::ostringstream msg;
    msg << "row count mismatch: y has " << n << ", a has " << dataset.a.size()
        << ", x has " << dataset.x.rows();
    add(ViolationKind::kDimensionMismatch, std::nullopt, msg.str());
  }
  if (dataset.covariate_names.size() != p) {
    std::ostringstream msg;
    msg << "covariate dimension " << p << " does not match "
        << dataset.covariate_names.size() << " covariate names";
    add(ViolationKind::kDimensionMismatch, std::nullopt, msg.str());
  }

  const std::size_t rows =
      std::min({n, dataset.a.size(), static_cast<std::size_t>(dataset.x.rows())});
  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::isfinite(dataset.y[i])) {
      add(ViolationKind::kNonFinite, i,
          "row " + std::to_string(i) + ": non-finite outcome");
    }
    if (dataset.a[i] != 0 && dataset.a[i] != 1) {
      add(ViolationKind::kInvalidTreatment, i,
          "row " + std::to_string(i) + ": treatment must be 0 or 1");
    }
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(dataset.x(static_cast<Eigen::Index>(i),
                                   static_cast<Eigen::Index>(j)))) {
        const std::string name = j < dataset.covariate_names.size()
                                     ? dataset.covariate_names[j]
                                     : "x" + std::to_string(j + 1);
        add(ViolationKind::kNonFinite, i,
            "row " + std::to_string(i) + ": non-finite covariate " + name);
      }
    }
  }

  for (int arm : {0, 1}) {
    if (dataset.count_arm(arm) < kMinArmRows) {
      add(ViolationKind::kSmallArm, std::nullopt,
          "arm a=" + std::to_string(arm) + " has <" +
              std::to_string(kMinArmRows) + " rows");
    }
  }
  report.treated_fraction =
      n == 0 ? 0.0 : static_cast<double>(dataset.count_arm(1)) / static_cast<double>(n);
  return report;
}

std::vector<CoverageFlag> validate_target_coverage(
    std::span<const CovariateProfile> profiles,
    std::span<const TrialDataset> trials) {
  if (trials.empty()) {
    throw InputError("target coverage check needs at least one trial");
  }
  const std::size_t p = trials.front().dim();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(
      static_cast<Eigen::Index>(p), std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (const auto& trial : trials) {
    if (trial.dim() != p) {
      throw InputError("trial " + std::to_string(trial.study_id) + " has " +
                       std::to_string(trial.dim()) + " covariates, expected " +
                       std::to_string(p));
    }
    if (trial.x.rows() > 0) {
      lo = lo.cwiseMin(trial.x.colwise().minCoeff().transpose());
      hi = hi.cwiseMax(trial.x.colwise().maxCoeff().transpose());
    }
  }
  const auto& names = trials.front().covariate_names;

  std::vector<CoverageFlag> flags;
  flags.reserve(profiles.size());
  for (const auto& profile : profiles) {
    if (static_cast<std::size_t>(profile.x.size()) != p) {
      throw InputError("profile " + std::to_string(profile.profile_id) + " has " +
                       std::to_string(profile.x.size()) + " covariates, expected " +
                       std::to_string(p));
    }
    CoverageFlag flag{profile.profile_id, {}};
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(p); ++j) {
      const double v = profile.x(j);
      if (!(v >= lo(j) && v <= hi(j))) {
        flag.outside.push_back(static_cast<std::size_t>(j) < names.size()
                                   ? names[static_cast<std::size_t>(j)]
                                   : "x" + std::to_string(j + 1));
      }
    }
    flags.push_back(std::move(flag));
  }
  return flags;
}

}  // namespace metacate
