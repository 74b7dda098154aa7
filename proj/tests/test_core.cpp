#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <random>

#include "metacate/core.hpp"
#include "support.hpp"

using namespace metacate;

namespace {

TrialDataset balanced(std::size_t treated, std::size_t control) {
  TrialDataset d;
  d.study_id = 3;
  d.covariate_names = {"age", "sex"};
  const std::size_t n = treated + control;
  d.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    d.y.push_back(static_cast<double>(i));
    d.a.push_back(i < treated ? 1 : 0);
    d.x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i) / 10.0;
    d.x(static_cast<Eigen::Index>(i), 1) = static_cast<double>(i % 2);
  }
  return d;
}

bool has_kind(const ValidationReport& r, ViolationKind kind) {
  for (const auto& v : r.violations) {
    if (v.kind == kind) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("clean trial validates with arm fraction reported") {
  const auto report = validate_trial(balanced(10, 10));
  CHECK(report.ok());
  CHECK(report.study_id == 3);
  CHECK(report.treated_fraction == doctest::Approx(0.5));
}

TEST_CASE("missing control arm is a positivity violation") {
  const auto report = validate_trial(balanced(10, 0));
  REQUIRE_FALSE(report.ok());
  CHECK(has_kind(report, ViolationKind::kSmallArm));
  bool found = false;
  for (const auto& v : report.violations) found |= v.message.find("arm a=0 has <2 rows") != std::string::npos;
  CHECK(found);
}

TEST_CASE("single row in an arm is below the floor") {
  CHECK(has_kind(validate_trial(balanced(1, 10)), ViolationKind::kSmallArm));
  CHECK(validate_trial(balanced(2, 2)).ok());
}

TEST_CASE("non-finite outcome is reported with its row") {
  auto d = balanced(10, 10);
  d.y[7] = std::numeric_limits<double>::quiet_NaN();
  const auto report = validate_trial(d);
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0].kind == ViolationKind::kNonFinite);
  REQUIRE(report.violations[0].row.has_value());
  CHECK(*report.violations[0].row == 7);
  CHECK(report.violations[0].message.find("row 7") != std::string::npos);
}

TEST_CASE("non-finite covariate and bad treatment code") {
  auto d = balanced(10, 10);
  d.x(4, 1) = std::numeric_limits<double>::infinity();
  d.a[2] = 2;
  const auto report = validate_trial(d);
  CHECK(has_kind(report, ViolationKind::kNonFinite));
  CHECK(has_kind(report, ViolationKind::kInvalidTreatment));
}

TEST_CASE("dimension mismatches are reported") {
  auto d = balanced(5, 5);
  d.y.pop_back();
  CHECK(has_kind(validate_trial(d), ViolationKind::kDimensionMismatch));
  auto e = balanced(5, 5);
  e.covariate_names.pop_back();
  CHECK(has_kind(validate_trial(e), ViolationKind::kDimensionMismatch));
}

TEST_CASE("validate_trial is idempotent and leaves the data alone") {
  auto d = balanced(3, 8);
  d.y[1] = std::numeric_limits<double>::quiet_NaN();
  const auto before = d.x;
  const auto r1 = validate_trial(d);
  const auto r2 = validate_trial(d);
  REQUIRE(r1.violations.size() == r2.violations.size());
  for (std::size_t i = 0; i < r1.violations.size(); ++i) {
    CHECK(r1.violations[i].message == r2.violations[i].message);
  }
  CHECK(d.x == before);
}

TEST_CASE("target coverage uses the closed pooled box") {
  const std::vector<TrialDataset> trials{balanced(5, 5)};
  const Eigen::VectorXd row = trials[0].x.row(3).transpose();
  std::vector<CovariateProfile> profiles{{1, row}, {2, row}, {3, row}};
  profiles[1].x(0) = trials[0].x.col(0).maxCoeff() + 10.0;
  profiles[2].x(0) = trials[0].x.col(0).minCoeff();
  const auto flags = validate_target_coverage(profiles, trials);
  REQUIRE(flags.size() == 3);
  CHECK_FALSE(flags[0].flagged());
  REQUIRE(flags[1].flagged());
  CHECK(flags[1].outside == std::vector<std::string>{"age"});
  CHECK_FALSE(flags[2].flagged());
}

TEST_CASE("target coverage rejects a dimension mismatch") {
  const std::vector<TrialDataset> trials{balanced(5, 5)};
  const std::vector<CovariateProfile> profiles{{1, Eigen::VectorXd::Zero(3)}};
  CHECK_THROWS_AS(validate_target_coverage(profiles, trials), InputError);
}

TEST_CASE("widening a trial range never adds a flag") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<TrialDataset> trials{
        testsupport::make_trial(20, 3, 100 + rep, [](const Eigen::VectorXd&, int) { return 0.0; }),
        testsupport::make_trial(20, 3, 200 + rep, [](const Eigen::VectorXd&, int) { return 0.0; })};
    const auto profiles = testsupport::random_profiles(30, 3, 300 + rep, 1.5);
    const auto before = validate_target_coverage(profiles, trials);
    // Push one extreme value further out in a random trial and column.
    const auto t = static_cast<std::size_t>(rep % 2);
    const Eigen::Index col = rep % 3;
    Eigen::Index argmax = 0;
    trials[t].x.col(col).maxCoeff(&argmax);
    trials[t].x(argmax, col) += std::abs(normal(rng)) + 0.1;
    const auto after = validate_target_coverage(profiles, trials);
    for (std::size_t j = 0; j < profiles.size(); ++j) {
      CHECK(after[j].outside.size() <= before[j].outside.size());
    }
  }
}
