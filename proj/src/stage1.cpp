#include "metacate/stage1.hpp"

#include <cmath>

#include "metacate/linear.hpp"
#include "metacate/special.hpp"

namespace metacate {

Stage1Method parse_stage1_method(std::string_view name) {
  if (name == "linear") return Stage1Method::kLinear;
  if (name == "forest") return Stage1Method::kForest;
  if (name == "bart") return Stage1Method::kBart;
  throw ConfigError("unknown Stage-1 method '" + std::string(name) +
                    "' (expected linear, forest or bart)");
}

std::string_view to_string(Stage1Method method) {
  switch (method) {
    case Stage1Method::kLinear:
      return "linear";
    case Stage1Method::kForest:
      return "forest";
    case Stage1Method::kBart:
      return "bart";
  }
  return "unknown";
}

std::vector<StudyCateEstimate> estimate_study(const TrialDataset& dataset,
                                              std::span<const CovariateProfile> profiles,
                                              const Stage1Options& options) {
  std::vector<StudyCateEstimate> out;
  out.reserve(profiles.size());
  switch (options.method) {
    case Stage1Method::kLinear: {
      const auto moderators = options.moderators.value_or(all_moderators(dataset.dim()));
      const LinearCateFit fit = fit_interaction_ols(dataset, moderators);
      for (const auto& profile : profiles) out.push_back(linear_cate(fit, profile, dataset.study_id));
      break;
    }
    case Stage1Method::kForest: {
      const CausalForestModel model = fit_causal_forest(dataset, options.forest, options.threads);
      for (const auto& profile : profiles) out.push_back(forest_cate(model, profile, dataset.study_id));
      break;
    }
    case Stage1Method::kBart: {
      const BartPosterior posterior = fit_bart_slearner(dataset, profiles, options.bart);
      if (options.bart_interval == BartInterval::kNormal) {
        for (const auto& profile : profiles) {
          out.push_back(bart_cate_normal(posterior, profile, dataset.study_id));
        }
      } else {
        const double z = normal_quantile(0.5 + 0.5 * options.bart_level);
        for (const auto& profile : profiles) {
          const auto q = bart_cate_quantile(posterior, profile, options.bart_level);
          const double half = 0.5 * (q.upper - q.lower);
          out.push_back({dataset.study_id, profile.profile_id, q.tau_hat, (half / z) * (half / z)});
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace metacate
