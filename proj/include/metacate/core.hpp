#pragma once

// Domain types shared by the Stage-1 learners, the Stage-2 pooling code and
// the simulation harness.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace metacate {

// Error taxonomy. The CLI maps InputError to exit code 2, ConfigError to 3
// and every other Error to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Individual-level rows of one randomized trial.
///
/// Rows are stored column-wise: y[i], a[i] and x.row(i) describe row i.
/// Binary covariates are plain 0/1 reals. The type does not enforce the
/// causal preconditions; run validate_trial() and decide what to do with
/// the report.
struct TrialDataset {
  int study_id = 0;
  std::vector<std::string> covariate_names;
  std::vector<double> y;
  std::vector<int> a;
  Eigen::MatrixXd x;  // n x p

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t count_arm(int arm) const;
};

struct CovariateProfile {
  int profile_id = 0;
  Eigen::VectorXd x;
};

/// Per-study CATE and its squared standard error at one profile.
struct StudyCateEstimate {
  int study_id = 0;
  int profile_id = 0;
  double tau_hat = 0.0;
  double se2 = 0.0;
};

struct PooledCate {
  int profile_id = 0;
  double tau_pooled = 0.0;
  double var_pooled = 0.0;
  double theta2 = 0.0;
  int k_studies = 0;
  std::vector<double> weights;  // unnormalized, 1 / (se2_s + theta2)
};

struct PredictionInterval {
  int profile_id = 0;
  double center = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  int df = 1;
};

enum class ViolationKind {
  kDimensionMismatch,
  kNonFinite,
  kInvalidTreatment,
  kSmallArm,
};

struct Violation {
  ViolationKind kind;
  std::optional<std::size_t> row;  // 0-based, when the violation is row-specific
  std::string message;
};

struct ValidationReport {
  int study_id = 0;
  std::vector<Violation> violations;
  // Fraction of rows with a = 1; the empirical propensity of an RCT.
  double treated_fraction = 0.0;

  bool ok() const { return violations.empty(); }
};

// Arms with fewer rows than this are reported as positivity violations.
inline constexpr std::size_t kMinArmRows = 2;

ValidationReport validate_trial(const TrialDataset& dataset);

struct CoverageFlag {
  int profile_id = 0;
  std::vector<std::string> outside;  // covariates outside the pooled trial range

  bool flagged() const { return !outside.empty(); }
};

/// Flags profiles that fall outside the pooled [min, max] box of the trial
/// covariates. The box is closed, so boundary values are inside. Throws
/// InputError on a dimension mismatch.
std::vector<CoverageFlag> validate_target_coverage(
    std::span<const CovariateProfile> profiles,
    std::span<const TrialDataset> trials);

}  // namespace metacate
