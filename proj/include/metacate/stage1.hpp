#pragma once

// One entry point for every Stage-1 learner: a trial in, one
// StudyCateEstimate per profile out.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metacate/bart.hpp"
#include "metacate/core.hpp"
#include "metacate/forest.hpp"

namespace metacate {

enum class Stage1Method { kLinear, kForest, kBart };
enum class BartInterval { kNormal, kQuantile };

struct Stage1Options {
  Stage1Method method = Stage1Method::kLinear;
  // Covariate indices interacted with treatment; unset means all covariates.
  std::optional<std::vector<std::size_t>> moderators;
  ForestParams forest;
  BartParams bart;
  BartInterval bart_interval = BartInterval::kNormal;
  double bart_level = 0.95;  // only used with the quantile interval
  int threads = 1;           // forest tree growing
};

Stage1Method parse_stage1_method(std::string_view name);
std::string_view to_string(Stage1Method method);

/// Fits the selected learner to one trial and evaluates it at every profile.
///
/// With the quantile BART interval, se2 is the squared half-width of the
/// credible interval divided by z_{(1+level)/2}^2, so the aggregate file keeps
/// a single variance column.
std::vector<StudyCateEstimate> estimate_study(const TrialDataset& dataset,
                                              std::span<const CovariateProfile> profiles,
                                              const Stage1Options& options);

}  // namespace metacate
