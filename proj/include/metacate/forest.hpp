#pragma once

// Causal forest Stage-1 learner.
//
// Trees are grouped into bags. Each bag draws a half-sample of the study
// without replacement and every tree in the bag subsamples from it, which
// lets forest_cate() estimate the variance of the forest average from the
// spread of bag means. Splits maximize sum_children n_child * tau_child^2,
// where tau_child is the treated-minus-control mean difference. Honest trees
// choose splits on one half of their subsample and fill the leaves with the
// other half.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "metacate/core.hpp"

namespace metacate {

struct ForestParams {
  int n_trees = 1000;
  bool honest = true;
  int min_leaf_treated = 5;
  int min_leaf_control = 5;
  double subsample_fraction = 0.5;  // of the full study, capped at the bag half-sample
  int mtry = 0;                     // 0 means every covariate
  int bag_size = 20;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an inconsistent combination.
  void validate(std::size_t n_covariates) const;
};

struct CausalTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double tau = 0.0;  // leaf treated-minus-control mean on estimation rows
    int n_treated = 0;
    int n_control = 0;

    bool is_leaf() const { return feature < 0; }
  };

  std::vector<Node> nodes;  // nodes[0] is the root
  std::vector<std::uint32_t> split_rows;
  std::vector<std::uint32_t> estimation_rows;  // equals split_rows for adaptive trees
  int bag = 0;

  /// Rows with x[feature] <= threshold go left.
  const Node& leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct CausalForestModel {
  std::vector<CausalTree> trees;
  ForestParams params;
  std::size_t n_covariates = 0;
  double se2_floor = 0.0;  // 1e-6 times the sample variance of the outcome
};

inline constexpr double kForestVarianceFloorFactor = 1e-6;

/// Deterministic in (dataset, params); `threads` only changes wall time.
CausalForestModel fit_causal_forest(const TrialDataset& dataset, const ForestParams& params,
                                    int threads = 1);

/// Forest average of leaf effects with a between-bag variance estimate.
/// Trees whose leaf lacks an arm are skipped; more than half skipped throws
/// EstimationError.
StudyCateEstimate forest_cate(const CausalForestModel& model, const CovariateProfile& profile,
                              int study_id = 0);

}  // namespace metacate
