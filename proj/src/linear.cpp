#include "metacate/linear.hpp"

#include <algorithm>
#include <numeric>

namespace metacate {
namespace {

Eigen::Index numerical_rank(const Eigen::MatrixXd& m) {
  if (m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  return (s.array() > kRankTolerance * s(0)).count();
}

}  // namespace

std::vector<std::size_t> all_moderators(std::size_t p) {
  std::vector<std::size_t> out(p);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

Eigen::MatrixXd interaction_design(const TrialDataset& dataset,
                                   std::span<const std::size_t> moderators,
                                   std::vector<std::string>* column_names) {
  const auto n = static_cast<Eigen::Index>(dataset.size());
  const auto p = static_cast<Eigen::Index>(dataset.dim());
  const auto m = static_cast<Eigen::Index>(moderators.size());
  for (std::size_t j : moderators) {
    if (j >= dataset.dim()) {
      throw InputError("moderator index " + std::to_string(j + 1) + " exceeds covariate count " +
                       std::to_string(dataset.dim()));
    }
  }
  Eigen::MatrixXd design(n, 2 + p + m);
  design.col(0).setOnes();
  design.middleCols(1, p) = dataset.x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = dataset.a[static_cast<std::size_t>(i)];
    design(i, p + 1) = a;
    for (Eigen::Index k = 0; k < m; ++k) {
      design(i, p + 2 + k) = a * dataset.x(i, static_cast<Eigen::Index>(moderators[k]));
    }
  }
  if (column_names) {
    auto name = [&](std::size_t j) {
      return j < dataset.covariate_names.size() ? dataset.covariate_names[j]
                                                : "x" + std::to_string(j + 1);
    };
    column_names->clear();
    column_names->push_back("intercept");
    for (std::size_t j = 0; j < dataset.dim(); ++j) column_names->push_back(name(j));
    column_names->push_back("a");
    for (std::size_t j : moderators) column_names->push_back("a:" + name(j));
  }
  return design;
}

LeastSquaresSolution solve_least_squares(const Eigen::MatrixXd& design,
                                         const Eigen::VectorXd& y,
                                         std::span<const std::string> column_names) {
  const Eigen::Index q = design.cols();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const Eigen::Index rank =
      s.size() == 0 || s(0) == 0.0 ? 0 : (s.array() > kRankTolerance * s(0)).count();
  if (rank < q) {
    // Grow the column set until the rank stalls; that column is redundant.
    Eigen::Index offending = q - 1;
    for (Eigen::Index j = 0; j < q; ++j) {
      if (numerical_rank(design.leftCols(j + 1)) < j + 1) {
        offending = j;
        break;
      }
    }
    const std::string name = static_cast<std::size_t>(offending) < column_names.size()
                                 ? column_names[static_cast<std::size_t>(offending)]
                                 : "column " + std::to_string(offending);
    throw EstimationError("singular design: column '" + name +
                          "' is collinear with earlier columns");
  }
  LeastSquaresSolution out;
  const Eigen::VectorXd inv_s = s.cwiseInverse();
  out.coefficients = svd.matrixV() * inv_s.asDiagonal() * (svd.matrixU().transpose() * y);
  const Eigen::MatrixXd vs = svd.matrixV() * inv_s.asDiagonal();
  out.xtx_inverse = vs * vs.transpose();
  out.xtx_inverse = 0.5 * (out.xtx_inverse + out.xtx_inverse.transpose()).eval();
  out.rss = (y - design * out.coefficients).squaredNorm();
  return out;
}

LinearCateFit fit_interaction_ols(const TrialDataset& dataset,
                                  std::span<const std::size_t> moderators) {
  std::vector<std::string> names;
  const Eigen::MatrixXd design = interaction_design(dataset, moderators, &names);
  const auto n = design.rows();
  const auto q = design.cols();
  if (n <= q) {
    throw EstimationError("study " + std::to_string(dataset.study_id) + ": " +
                          std::to_string(n) + " rows cannot estimate " + std::to_string(q) +
                          " coefficients with a residual variance (need n > q)");
  }
  const Eigen::VectorXd y =
      Eigen::Map<const Eigen::VectorXd>(dataset.y.data(), static_cast<Eigen::Index>(dataset.y.size()));
  LeastSquaresSolution ls = solve_least_squares(design, y, names);

  LinearCateFit fit;
  fit.coefficients = std::move(ls.coefficients);
  fit.sigma2 = ls.rss / static_cast<double>(n - q);
  fit.covariance = fit.sigma2 * ls.xtx_inverse;
  fit.moderator_indices.assign(moderators.begin(), moderators.end());
  fit.n_covariates = dataset.dim();
  fit.coefficient_names = std::move(names);
  return fit;
}

StudyCateEstimate linear_cate(const LinearCateFit& fit, const CovariateProfile& profile,
                              int study_id) {
  if (static_cast<std::size_t>(profile.x.size()) != fit.n_covariates) {
    throw InputError("profile " + std::to_string(profile.profile_id) + " has " +
                     std::to_string(profile.x.size()) + " covariates, fit expects " +
                     std::to_string(fit.n_covariates));
  }
  const Eigen::Index q = fit.coefficients.size();
  Eigen::VectorXd contrast = Eigen::VectorXd::Zero(q);
  const Eigen::Index t = fit.treatment_index();
  contrast(t) = 1.0;
  for (std::size_t k = 0; k < fit.moderator_indices.size(); ++k) {
    contrast(t + 1 + static_cast<Eigen::Index>(k)) =
        profile.x(static_cast<Eigen::Index>(fit.moderator_indices[k]));
  }
  StudyCateEstimate est;
  est.study_id = study_id;
  est.profile_id = profile.profile_id;
  est.tau_hat = contrast.dot(fit.coefficients);
  est.se2 = std::max(0.0, contrast.dot(fit.covariance * contrast));
  return est;
}

}  // namespace metacate
