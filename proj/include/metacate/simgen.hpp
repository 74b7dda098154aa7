#pragma once

// Simulation harness: multi-trial data generation, a frozen target sample,
// full two-stage replications, and per-profile coverage / length / bias.
//
// Covariates are generated in the column order age, sex, smoking, weight,
// madrs. Continuous covariates are on a standardized scale; sex and smoking
// are 0/1.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "metacate/core.hpp"
#include "metacate/rng.hpp"
#include "metacate/stage1.hpp"

namespace metacate {

enum class CateSetting { kLinear, kNonlinear };
enum class CovariateMode { kVariable, kSame, kAgeOnlyVariable };
enum class EffectDistribution { kNormal, kUniform };
// kRedrawn draws fresh target effects every replication. It measures marginal
// coverage under the random-effects model; experiments default to kFrozen.
enum class TargetEffects { kFrozen, kRedrawn };

struct SimConfig {
  int k_studies = 10;
  int n_per_study = 500;
  CateSetting cate_setting = CateSetting::kLinear;
  int heterogeneity_level = 1;  // 1..3; 0 switches all study-level variation off
  CovariateMode covariate_mode = CovariateMode::kVariable;
  EffectDistribution effect_distribution = EffectDistribution::kNormal;
  int n_replications = 500;
  std::uint64_t master_seed = 0;
  int n_target_profiles = 100;
  TargetEffects target_effects = TargetEffects::kFrozen;
  double alpha = 0.05;

  void validate() const;
};

namespace covariate {
inline constexpr int kAge = 0;
inline constexpr int kSex = 1;
inline constexpr int kSmoking = 2;
inline constexpr int kWeight = 3;
inline constexpr int kMadrs = 4;
inline constexpr int kCount = 5;
}  // namespace covariate

inline const std::array<std::string, covariate::kCount> kSimCovariateNames{
    "age", "sex", "smoking", "weight", "madrs"};

inline constexpr double kOutcomeNoiseSd = 0.05;
inline constexpr double kOracleSe2 = 1e-6;

/// Study-level random terms: a shifts the main effect, b and c shift the
/// CATE intercept and age slope.
struct StudyEffects {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

/// Shipped 5x5 covariance of the latent covariates: unit variances, 0.2
/// between weight and latent sex, 0.1 elsewhere.
Eigen::MatrixXd covariate_covariance();

/// Means of one trial (sex and smoking entries are probabilities).
Eigen::VectorXd draw_covariate_means(CovariateMode mode, Rng& rng);

/// n rows with the given means: multivariate normal latents, binary
/// columns set to 1 when Phi(latent) falls below the clamped mean.
Eigen::MatrixXd sample_covariates(const Eigen::VectorXd& means, int n, Rng& rng);

Eigen::MatrixXd gen_trial_covariates(const SimConfig& config, Rng& rng);
std::vector<int> gen_treatments(std::size_t n, Rng& rng);

/// Target sample: older, more female, more smokers, heavier and less
/// depressed than the trial centers.
std::vector<CovariateProfile> gen_target_profiles(const SimConfig& config, Rng& rng);
Eigen::VectorXd target_covariate_means();

double true_cate(const Eigen::Ref<const Eigen::VectorXd>& x, CateSetting setting,
                 const StudyEffects& effects);
double main_effect(const Eigen::Ref<const Eigen::VectorXd>& x, CateSetting setting,
                   const StudyEffects& effects);

std::vector<double> gen_outcomes(const Eigen::MatrixXd& covariates, std::span<const int> treatments,
                                 CateSetting setting, const StudyEffects& effects, Rng& rng,
                                 double noise_sd = kOutcomeNoiseSd);

std::array<double, 3> effect_sds(int level);
StudyEffects draw_study_effects(int level, EffectDistribution distribution, Rng& rng);

// Deterministic views of the experiment's random draws.
std::vector<CovariateProfile> experiment_profiles(const SimConfig& config);
StudyEffects target_effects(const SimConfig& config, int replication);
std::vector<StudyEffects> replication_study_effects(const SimConfig& config, int replication);
TrialDataset gen_trial(const SimConfig& config, int replication, int study,
                       const StudyEffects& effects);

struct TrueEffectRecord {
  StudyEffects target;
  std::vector<double> target_tau;  // per profile
  std::vector<StudyEffects> study_effects;
};

TrueEffectRecord true_effects(const SimConfig& config, std::span<const CovariateProfile> profiles,
                              int replication);

struct SimMethod {
  std::string name;
  bool oracle = false;  // inject the true study CATEs with se2 = kOracleSe2
  Stage1Options stage1;
};

SimMethod make_sim_method(std::string_view name);

struct ProfileMetrics {
  int profile_id = 0;
  double coverage = 0.0;
  double mean_length = 0.0;
  double bias = 0.0;
  int n_effective_replications = 0;
};

struct MetricsTable {
  std::string method;
  std::vector<ProfileMetrics> rows;
  int n_replications = 0;
  std::vector<std::string> failures;  // one entry per aborted replication
};

/// Prediction intervals of one replication, one per target profile.
std::vector<PredictionInterval> run_replication(const SimConfig& config, const SimMethod& method,
                                                std::span<const CovariateProfile> profiles,
                                                int replication);

/// Deterministic in (config, method); replications run on `threads` workers
/// and are reduced in replication order.
MetricsTable run_experiment(const SimConfig& config, const SimMethod& method, int threads = 1);

struct HierarchyCalibration {
  double coverage = 0.0;
  double mean_length = 0.0;
  int replications = 0;
};

/// Draws tau_s ~ N(0, theta2) and tau_hat_s ~ N(tau_s, v_s) with
/// v_s ~ U(v_min, v_max) known to the pooler, and checks how often the
/// prediction interval contains a fresh tau_{K+1} ~ N(0, theta2).
HierarchyCalibration hierarchy_calibration(int k_studies, double theta2, double v_min,
                                           double v_max, int replications, std::uint64_t seed,
                                           double alpha = 0.05);

}  // namespace metacate
