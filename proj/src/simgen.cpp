#include "metacate/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "metacate/meta.hpp"
#include "metacate/parallel.hpp"
#include "metacate/special.hpp"

namespace metacate {
namespace {

// Centers and across-trial standard deviations of the trial covariate means.
constexpr std::array<double, covariate::kCount> kMeanCenter{0.0, 0.6784, 0.3043, 0.0, 0.0};
constexpr std::array<double, covariate::kCount> kMeanSd{0.2, 0.1, 0.1, 0.5, 0.3};

// Target sample shift relative to the trial centers.
constexpr std::array<double, covariate::kCount> kTargetShift{0.5, 0.1, 0.1, 0.5, -0.3};

bool is_binary(int column) { return column == covariate::kSex || column == covariate::kSmoking; }

}  // namespace

void SimConfig::validate() const {
  if (k_studies < 3) throw ConfigError("k_studies must be at least 3 for prediction intervals");
  if (n_per_study < 4) throw ConfigError("n_per_study must be at least 4");
  if (heterogeneity_level < 0 || heterogeneity_level > 3) {
    throw ConfigError("heterogeneity_level must be 0, 1, 2 or 3");
  }
  if (n_replications < 1) throw ConfigError("n_replications must be positive");
  if (n_target_profiles < 1) throw ConfigError("n_target_profiles must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

Eigen::MatrixXd covariate_covariance() {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(covariate::kCount, covariate::kCount, 0.1);
  cov.diagonal().setOnes();
  cov(covariate::kWeight, covariate::kSex) = 0.2;
  cov(covariate::kSex, covariate::kWeight) = 0.2;
  return cov;
}

Eigen::VectorXd draw_covariate_means(CovariateMode mode, Rng& rng) {
  Eigen::VectorXd means(covariate::kCount);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < covariate::kCount; ++j) {
    const bool varies = mode == CovariateMode::kVariable ||
                        (mode == CovariateMode::kAgeOnlyVariable && j == covariate::kAge);
    means(j) = kMeanCenter[static_cast<std::size_t>(j)];
    if (varies) means(j) += kMeanSd[static_cast<std::size_t>(j)] * normal(rng);
  }
  return means;
}

Eigen::MatrixXd sample_covariates(const Eigen::VectorXd& means, int n, Rng& rng) {
  static const Eigen::MatrixXd chol = covariate_covariance().llt().matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(n, covariate::kCount);
  Eigen::VectorXd eps(covariate::kCount);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < covariate::kCount; ++j) eps(j) = normal(rng);
    const Eigen::VectorXd z = chol * eps;
    for (int j = 0; j < covariate::kCount; ++j) {
      if (is_binary(j)) {
        const double prob = std::clamp(means(j), 0.0, 1.0);
        out(i, j) = normal_cdf(z(j)) < prob ? 1.0 : 0.0;
      } else {
        out(i, j) = means(j) + z(j);
      }
    }
  }
  return out;
}

Eigen::MatrixXd gen_trial_covariates(const SimConfig& config, Rng& rng) {
  const Eigen::VectorXd means = draw_covariate_means(config.covariate_mode, rng);
  return sample_covariates(means, config.n_per_study, rng);
}

std::vector<int> gen_treatments(std::size_t n, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<int> a(n);
  for (auto& v : a) v = coin(rng) ? 1 : 0;
  return a;
}

Eigen::VectorXd target_covariate_means() {
  Eigen::VectorXd means(covariate::kCount);
  for (int j = 0; j < covariate::kCount; ++j) {
    means(j) = kMeanCenter[static_cast<std::size_t>(j)] + kTargetShift[static_cast<std::size_t>(j)];
  }
  return means;
}

std::vector<CovariateProfile> gen_target_profiles(const SimConfig& config, Rng& rng) {
  const Eigen::MatrixXd x = sample_covariates(target_covariate_means(), config.n_target_profiles, rng);
  std::vector<CovariateProfile> profiles(static_cast<std::size_t>(config.n_target_profiles));
  for (int i = 0; i < config.n_target_profiles; ++i) {
    profiles[static_cast<std::size_t>(i)] = {i + 1, x.row(i).transpose()};
  }
  return profiles;
}

double true_cate(const Eigen::Ref<const Eigen::VectorXd>& x, CateSetting setting,
                 const StudyEffects& effects) {
  const double age = x(covariate::kAge);
  if (setting == CateSetting::kLinear) return (2.505 + effects.b) + (0.82 + effects.c) * age;
  return (2.20 + effects.b) * std::exp((0.35 + effects.c) * age);
}

double main_effect(const Eigen::Ref<const Eigen::VectorXd>& x, CateSetting setting,
                   const StudyEffects& effects) {
  const double age = x(covariate::kAge);
  if (setting == CateSetting::kLinear) {
    return (-17.40 + effects.a) - 0.13 * age - 2.05 * x(covariate::kMadrs) -
           0.11 * x(covariate::kSex);
  }
  return (-17.52 + effects.a) - 0.08 * age;
}

std::vector<double> gen_outcomes(const Eigen::MatrixXd& covariates, std::span<const int> treatments,
                                 CateSetting setting, const StudyEffects& effects, Rng& rng,
                                 double noise_sd) {
  if (static_cast<std::size_t>(covariates.rows()) != treatments.size()) {
    throw DomainError("gen_outcomes: covariate and treatment row counts differ");
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> y(treatments.size());
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
    const Eigen::VectorXd x = covariates.row(i).transpose();
    const auto idx = static_cast<std::size_t>(i);
    y[idx] = main_effect(x, setting, effects) + treatments[idx] * true_cate(x, setting, effects) +
             noise_sd * noise(rng);
  }
  return y;
}

std::array<double, 3> effect_sds(int level) {
  switch (level) {
    case 0:
      return {0.0, 0.0, 0.0};
    case 1:
      return {1.0, 0.25, 0.25};
    case 2:
      return {1.0, 0.5, 0.25};
    case 3:
      return {1.0, 1.0, 0.5};
    default:
      throw ConfigError("heterogeneity level must be 0, 1, 2 or 3");
  }
}

StudyEffects draw_study_effects(int level, EffectDistribution distribution, Rng& rng) {
  const auto sd = effect_sds(level);
  if (level == 0) return {};
  if (distribution == EffectDistribution::kUniform) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = u(rng);
    const double b = u(rng);
    const double c = u(rng);
    return {a, b, c};
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = sd[0] * normal(rng);
  const double b = sd[1] * normal(rng);
  const double c = sd[2] * normal(rng);
  return {a, b, c};
}

std::vector<CovariateProfile> experiment_profiles(const SimConfig& config) {
  Rng rng = make_stream(config.master_seed, StreamTag::kTargetProfiles);
  return gen_target_profiles(config, rng);
}

StudyEffects target_effects(const SimConfig& config, int replication) {
  Rng rng = config.target_effects == TargetEffects::kFrozen
                ? make_stream(config.master_seed, StreamTag::kTargetEffects)
                : make_stream(config.master_seed, StreamTag::kTargetEffects,
                              {static_cast<std::uint64_t>(replication)});
  return draw_study_effects(config.heterogeneity_level, config.effect_distribution, rng);
}

std::vector<StudyEffects> replication_study_effects(const SimConfig& config, int replication) {
  std::vector<StudyEffects> effects;
  effects.reserve(static_cast<std::size_t>(config.k_studies));
  for (int s = 0; s < config.k_studies; ++s) {
    Rng rng = make_stream(config.master_seed, StreamTag::kStudyEffects,
                          {static_cast<std::uint64_t>(replication), static_cast<std::uint64_t>(s)});
    effects.push_back(draw_study_effects(config.heterogeneity_level, config.effect_distribution, rng));
  }
  return effects;
}

TrialDataset gen_trial(const SimConfig& config, int replication, int study,
                       const StudyEffects& effects) {
  const std::initializer_list<std::uint64_t> idx{static_cast<std::uint64_t>(replication),
                                                 static_cast<std::uint64_t>(study)};
  Rng cov_rng = make_stream(config.master_seed, StreamTag::kCovariates, idx);
  Rng arm_rng = make_stream(config.master_seed, StreamTag::kTreatments, idx);
  Rng out_rng = make_stream(config.master_seed, StreamTag::kOutcomes, idx);

  TrialDataset data;
  data.study_id = study + 1;
  data.covariate_names.assign(kSimCovariateNames.begin(), kSimCovariateNames.end());
  data.x = gen_trial_covariates(config, cov_rng);
  data.a = gen_treatments(static_cast<std::size_t>(config.n_per_study), arm_rng);
  data.y = gen_outcomes(data.x, data.a, config.cate_setting, effects, out_rng);
  return data;
}

TrueEffectRecord true_effects(const SimConfig& config, std::span<const CovariateProfile> profiles,
                              int replication) {
  TrueEffectRecord record;
  record.target = target_effects(config, replication);
  record.target_tau.reserve(profiles.size());
  for (const auto& profile : profiles) {
    record.target_tau.push_back(true_cate(profile.x, config.cate_setting, record.target));
  }
  record.study_effects = replication_study_effects(config, replication);
  return record;
}

SimMethod make_sim_method(std::string_view name) {
  SimMethod method;
  method.name = std::string(name);
  if (name == "oracle") {
    method.oracle = true;
  } else if (name == "linear") {
    method.stage1.method = Stage1Method::kLinear;
  } else if (name == "forest" || name == "forest_honest") {
    method.stage1.method = Stage1Method::kForest;
    method.stage1.forest.honest = true;
  } else if (name == "forest_adaptive") {
    method.stage1.method = Stage1Method::kForest;
    method.stage1.forest.honest = false;
  } else if (name == "bart") {
    method.stage1.method = Stage1Method::kBart;
  } else {
    throw ConfigError("unknown simulation method '" + std::string(name) +
                      "' (expected oracle, linear, forest, forest_honest, forest_adaptive or bart)");
  }
  return method;
}

std::vector<PredictionInterval> run_replication(const SimConfig& config, const SimMethod& method,
                                                std::span<const CovariateProfile> profiles,
                                                int replication) {
  const auto study_effects = replication_study_effects(config, replication);
  const std::size_t k = study_effects.size();
  // estimates[profile][study]
  std::vector<MetaInput> inputs(profiles.size());
  for (std::size_t j = 0; j < profiles.size(); ++j) {
    inputs[j].profile_id = profiles[j].profile_id;
    inputs[j].estimates.reserve(k);
  }
  for (std::size_t s = 0; s < k; ++s) {
    const int study = static_cast<int>(s);
    if (method.oracle) {
      for (std::size_t j = 0; j < profiles.size(); ++j) {
        inputs[j].estimates.push_back(
            {study + 1, profiles[j].profile_id,
             true_cate(profiles[j].x, config.cate_setting, study_effects[s]), kOracleSe2});
      }
      continue;
    }
    const TrialDataset data = gen_trial(config, replication, study, study_effects[s]);
    Stage1Options options = method.stage1;
    const std::uint64_t seed = derive_seed(config.master_seed, StreamTag::kStage1,
                                           {static_cast<std::uint64_t>(replication), s});
    options.forest.seed = seed;
    options.bart.seed = seed;
    options.threads = 1;
    const auto estimates = estimate_study(data, profiles, options);
    for (std::size_t j = 0; j < profiles.size(); ++j) inputs[j].estimates.push_back(estimates[j]);
  }

  std::vector<PredictionInterval> intervals;
  intervals.reserve(profiles.size());
  for (const auto& input : inputs) {
    const PooledCate pooled = pool_cate(input, reml_theta2(input));
    intervals.push_back(prediction_interval(pooled, config.alpha, static_cast<int>(k)));
  }
  return intervals;
}

MetricsTable run_experiment(const SimConfig& config, const SimMethod& method, int threads) {
  config.validate();
  const auto profiles = experiment_profiles(config);
  const auto reps = static_cast<std::size_t>(config.n_replications);

  struct Outcome {
    std::vector<PredictionInterval> intervals;
    std::vector<double> truth;
    std::optional<std::string> error;
  };
  std::vector<Outcome> outcomes(reps);
  parallel_for(reps, threads, [&](std::size_t r) {
    const int rep = static_cast<int>(r);
    Outcome& out = outcomes[r];
    try {
      const StudyEffects target = target_effects(config, rep);
      out.truth.reserve(profiles.size());
      for (const auto& p : profiles) out.truth.push_back(true_cate(p.x, config.cate_setting, target));
      out.intervals = run_replication(config, method, profiles, rep);
    } catch (const Error& e) {
      out.error = "replication " + std::to_string(rep) + ": " + e.what();
    }
  });

  MetricsTable table;
  table.method = method.name;
  table.n_replications = config.n_replications;
  table.rows.resize(profiles.size());
  std::vector<int> covered(profiles.size(), 0);
  std::vector<double> length(profiles.size(), 0.0);
  std::vector<double> bias(profiles.size(), 0.0);
  int effective = 0;
  for (const auto& out : outcomes) {
    if (out.error) {
      table.failures.push_back(*out.error);
      continue;
    }
    ++effective;
    for (std::size_t j = 0; j < profiles.size(); ++j) {
      const auto& pi = out.intervals[j];
      const double truth = out.truth[j];
      if (pi.lower <= truth && truth <= pi.upper) ++covered[j];
      length[j] += pi.upper - pi.lower;
      bias[j] += pi.center - truth;
    }
  }
  for (std::size_t j = 0; j < profiles.size(); ++j) {
    ProfileMetrics& m = table.rows[j];
    m.profile_id = profiles[j].profile_id;
    m.n_effective_replications = effective;
    if (effective > 0) {
      m.coverage = static_cast<double>(covered[j]) / effective;
      m.mean_length = length[j] / effective;
      m.bias = bias[j] / effective;
    }
  }
  return table;
}

HierarchyCalibration hierarchy_calibration(int k_studies, double theta2, double v_min,
                                           double v_max, int replications, std::uint64_t seed,
                                           double alpha) {
  if (k_studies < 3) throw ConfigError("hierarchy calibration needs K >= 3");
  HierarchyCalibration result;
  result.replications = replications;
  int covered = 0;
  double length = 0.0;
  const double theta = std::sqrt(theta2);
  for (int r = 0; r < replications; ++r) {
    Rng rng = make_stream(seed, StreamTag::kHierarchy, {static_cast<std::uint64_t>(r)});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> variance(v_min, v_max);
    MetaInput input;
    input.profile_id = 1;
    for (int s = 0; s < k_studies; ++s) {
      const double v = variance(rng);
      const double tau_s = theta * normal(rng);
      input.estimates.push_back({s + 1, 1, tau_s + std::sqrt(v) * normal(rng), v});
    }
    const double tau_new = theta * normal(rng);
    const PooledCate pooled = pool_cate(input, reml_theta2(input));
    const PredictionInterval pi = prediction_interval(pooled, alpha, k_studies);
    if (pi.lower <= tau_new && tau_new <= pi.upper) ++covered;
    length += pi.upper - pi.lower;
  }
  result.coverage = static_cast<double>(covered) / replications;
  result.mean_length = length / replications;
  return result;
}

}  // namespace metacate
