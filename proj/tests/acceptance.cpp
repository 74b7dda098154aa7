// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.
//
//   acceptance                 run all criteria
//   acceptance 4 6             run the listed criteria only
//   acceptance --write-golden  regenerate the stored CLI outputs

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "metacate/bart.hpp"
#include "metacate/forest.hpp"
#include "metacate/io.hpp"
#include "metacate/linear.hpp"
#include "metacate/meta.hpp"
#include "metacate/simgen.hpp"
#include "metacate/special.hpp"
#include "support.hpp"

using namespace metacate;
namespace fs = std::filesystem;

namespace {

// Chosen before any acceptance run and never tuned.
constexpr std::uint64_t kSeed = 20240601;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_coverage(const MetricsTable& t) {
  std::vector<double> c;
  for (const auto& r : t.rows) c.push_back(r.coverage);
  return median(c);
}

double mean_length(const MetricsTable& t) {
  double s = 0.0;
  for (const auto& r : t.rows) s += r.mean_length;
  return s / static_cast<double>(t.rows.size());
}

// ---- 1 -------------------------------------------------------------------

Outcome hierarchy() {
  const auto cal = hierarchy_calibration(10, 1.0, 0.1, 1.0, 5000, kSeed);
  return {cal.coverage >= 0.935 && cal.coverage <= 0.965,
          "coverage " + fmt("%.4f", cal.coverage) + " over 5000 replications, target [0.935, 0.965]"};
}

// ---- 2 and 10 -----------------------------------------------------------

Outcome coverage_run(EffectDistribution dist, std::initializer_list<const char*> methods, double bar) {
  SimConfig c;
  c.cate_setting = CateSetting::kLinear;
  c.heterogeneity_level = 1;
  c.k_studies = 10;
  c.n_per_study = 500;
  c.n_replications = 100;
  c.effect_distribution = dist;
  c.master_seed = kSeed;
  Outcome out{true, ""};
  for (const char* name : methods) {
    const auto table = run_experiment(c, make_sim_method(name));
    const double m = median_coverage(table);
    out.pass = out.pass && m >= bar;
    out.detail += std::string(out.detail.empty() ? "" : "; ") + name + " median coverage " + fmt("%.3f", m);
    if (!table.failures.empty()) {
      out.detail += " (" + std::to_string(table.failures.size()) + " replications aborted and reported)";
    }
  }
  out.detail += ", bar " + fmt("%.2f", bar);
  return out;
}

// ---- 3 -------------------------------------------------------------------

Outcome length_trend() {
  Outcome out{true, ""};
  for (auto setting : {CateSetting::kLinear, CateSetting::kNonlinear}) {
    SimConfig c;
    c.cate_setting = setting;
    c.n_replications = 50;
    c.master_seed = kSeed;
    c.heterogeneity_level = 1;
    const double low = mean_length(run_experiment(c, make_sim_method("linear")));
    c.heterogeneity_level = 3;
    const double high = mean_length(run_experiment(c, make_sim_method("linear")));
    out.pass = out.pass && high > low;
    out.detail += std::string(out.detail.empty() ? "" : "; ") +
                  (setting == CateSetting::kLinear ? "linear" : "nonlinear") + " level 1 " + fmt("%.3f", low) +
                  " vs level 3 " + fmt("%.3f", high);
  }
  return out;
}

// ---- 4 -------------------------------------------------------------------

// Brute-force maximizer: 1e-3 grid over [0, bound], then a 1e-6 grid
// around the best coarse point.
double grid_reml(const MetaInput& in) {
  double mean = 0.0;
  double vmax = 0.0;
  for (const auto& e : in.estimates) {
    mean += e.tau_hat;
    vmax = std::max(vmax, e.se2);
  }
  mean /= static_cast<double>(in.k());
  double var = 0.0;
  for (const auto& e : in.estimates) var += (e.tau_hat - mean) * (e.tau_hat - mean);
  var /= static_cast<double>(in.k() - 1);
  const double bound = 10.0 * var + vmax;
  double best_t = 0.0;
  double best = restricted_log_likelihood(0.0, in);
  const auto scan = [&](double lo, double hi, double step) {
    const auto steps = static_cast<long>(std::ceil((hi - lo) / step));
    const double start = lo;
    for (long i = 0; i <= steps; ++i) {
      const double t = start + static_cast<double>(i) * step;
      const double f = restricted_log_likelihood(t, in);
      if (f > best) {
        best = f;
        best_t = t;
      }
    }
  };
  scan(0.0, bound, 1e-3);
  const double centre = best_t;
  scan(std::max(0.0, centre - 1e-3), centre + 1e-3, 1e-6);
  return best_t;
}

Outcome reml_grid() {
  std::mt19937_64 rng(kSeed);
  std::normal_distribution<double> normal(0.0, 1.5);
  std::uniform_real_distribution<double> v(0.05, 2.0);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 3 + rep % 10;
    std::vector<double> tau;
    std::vector<double> var;
    for (int s = 0; s < k; ++s) {
      tau.push_back(normal(rng));
      var.push_back(v(rng));
    }
    const auto in = testsupport::meta_input(tau, var);
    worst = std::max(worst, std::abs(reml_theta2(in) - grid_reml(in)));
  }
  return {worst <= 1e-4, "max |reml - grid| " + fmt("%.2e", worst) + " over 100 inputs"};
}

// ---- 5 -------------------------------------------------------------------

Outcome dl_exact() {
  const double a = dl_theta2(testsupport::meta_input({0, 1, 2}, {0.5, 0.5, 0.5}));
  const double b = dl_theta2(testsupport::meta_input({0, 2}, {1, 1}));
  const double eps = std::numeric_limits<double>::epsilon();
  return {std::abs(a - 0.5) <= 4 * eps && std::abs(b - 1.0) <= 4 * eps,
          "dl (0,1,2) = " + fmt("%.17g", a) + ", dl (0,2) = " + fmt("%.17g", b)};
}

// ---- 6 -------------------------------------------------------------------

long double t_density(int df, long double x) {
  const long double nu = df;
  const long double logc = std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) - 0.5L * std::log(nu * M_PIl);
  return std::exp(logc - (nu + 1) / 2 * std::log1p(x * x / nu));
}

long double simpson(int df, long double a, long double b, long double fa, long double fm, long double fb,
                    long double whole, long double tol, int depth) {
  const long double m = (a + b) / 2;
  const long double lm = (a + m) / 2;
  const long double rm = (m + b) / 2;
  const long double flm = t_density(df, lm);
  const long double frm = t_density(df, rm);
  const long double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const long double right = (b - m) / 6 * (fm + 4 * frm + fb);
  const long double diff = left + right - whole;
  if (depth <= 0 || std::fabs(diff) <= 15 * tol) return left + right + diff / 15;
  return simpson(df, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(df, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

long double t_cdf_oracle(int df, long double x) {
  const long double fa = t_density(df, 0);
  const long double fb = t_density(df, x);
  const long double fm = t_density(df, x / 2);
  const long double whole = x / 6 * (fa + 4 * fm + fb);
  return 0.5L + simpson(df, 0, x, fa, fm, fb, whole, 1e-17L, 60);
}

double t_quantile_oracle(int df, double p) {
  long double lo = 0;
  long double hi = 1;
  while (t_cdf_oracle(df, hi) < p) hi *= 2;
  for (int i = 0; i < 200 && hi - lo > 1e-15L * hi; ++i) {
    const long double mid = (lo + hi) / 2;
    (t_cdf_oracle(df, mid) < p ? lo : hi) = mid;
  }
  return static_cast<double>((lo + hi) / 2);
}

Outcome t_quantiles() {
  double worst = 0.0;
  for (int df : {1, 2, 5, 28}) {
    for (double p : {0.6, 0.9, 0.975, 0.995}) {
      worst = std::max(worst, std::abs(t_quantile(df, p) - t_quantile_oracle(df, p)));
    }
  }
  const double q = t_quantile(2, 0.975);
  return {worst <= 1e-8 && std::abs(q - 4.3026527) <= 1e-5,
          "max error " + fmt("%.2e", worst) + ", t(2, 0.975) = " + fmt("%.9f", q)};
}

// ---- 7 -------------------------------------------------------------------

Outcome ols_exact() {
  SimConfig c;
  Rng rng = make_stream(kSeed, StreamTag::kCovariates, {0});
  TrialDataset d;
  d.study_id = 1;
  d.covariate_names.assign(kSimCovariateNames.begin(), kSimCovariateNames.end());
  d.x = gen_trial_covariates(c, rng);
  d.a = gen_treatments(static_cast<std::size_t>(d.x.rows()), rng);
  const Eigen::VectorXd beta = (Eigen::VectorXd(5) << -0.13, -0.11, 0.4, 0.2, -2.05).finished();
  const Eigen::VectorXd gamma = (Eigen::VectorXd(5) << 0.82, 0.3, -0.5, 0.1, 0.25).finished();
  const auto truth = [&](const Eigen::VectorXd& x) { return 2.505 + gamma.dot(x); };
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    const Eigen::VectorXd x = d.x.row(i).transpose();
    d.y.push_back(-17.4 + beta.dot(x) + d.a[static_cast<std::size_t>(i)] * truth(x));
  }
  const auto fit = fit_interaction_ols(d, all_moderators(5));
  const auto profiles = gen_target_profiles(SimConfig{.n_target_profiles = 20}, rng);
  double worst = 0.0;
  for (const auto& p : profiles) worst = std::max(worst, std::abs(linear_cate(fit, p).tau_hat - truth(p.x)));
  return {worst <= 1e-8, "max error " + fmt("%.2e", worst) + " at 20 profiles"};
}

// ---- 8 -------------------------------------------------------------------

Outcome forest_sanity() {
  const auto profiles = testsupport::random_profiles(50, 3, kSeed);
  ForestParams params;
  params.seed = kSeed;
  const auto constant = testsupport::make_trial(2000, 3, kSeed + 1, [](const Eigen::VectorXd& x, int a) {
    return x(0) + 2.0 * a;
  }, 0.1);
  const auto m_const = fit_causal_forest(constant, params);
  const auto zero = testsupport::make_trial(2000, 3, kSeed + 2, [](const Eigen::VectorXd& x, int) {
    return x(0) - 0.5 * x(1);
  }, 1.0);
  const auto m_zero = fit_causal_forest(zero, params);
  double err_const = 0.0;
  double err_zero = 0.0;
  for (const auto& p : profiles) {
    err_const += std::abs(forest_cate(m_const, p).tau_hat - 2.0);
    err_zero += std::abs(forest_cate(m_zero, p).tau_hat);
  }
  err_const /= static_cast<double>(profiles.size());
  err_zero /= static_cast<double>(profiles.size());

  bool honest = true;
  for (const auto* model : {&m_const, &m_zero}) {
    for (const auto& tree : model->trees) {
      std::set<std::uint32_t> split(tree.split_rows.begin(), tree.split_rows.end());
      for (auto r : tree.estimation_rows) honest = honest && !split.count(r);
    }
  }

  auto shifted = zero;
  for (auto& y : shifted.y) y += 41.5;
  auto swapped = zero;
  for (auto& a : swapped.a) a = 1 - a;
  const auto m_shift = fit_causal_forest(shifted, params);
  const auto m_swap = fit_causal_forest(swapped, params);
  double shift_dev = 0.0;
  bool antisymmetric = true;
  for (const auto& p : profiles) {
    const double base = forest_cate(m_zero, p).tau_hat;
    shift_dev = std::max(shift_dev, std::abs(forest_cate(m_shift, p).tau_hat - base));
    antisymmetric = antisymmetric && forest_cate(m_swap, p).tau_hat == -base;
  }
  bool same_splits = m_shift.trees.size() == m_zero.trees.size();
  for (std::size_t t = 0; same_splits && t < m_zero.trees.size(); ++t) {
    const auto& a = m_zero.trees[t].nodes;
    const auto& b = m_shift.trees[t].nodes;
    same_splits = a.size() == b.size();
    for (std::size_t k = 0; same_splits && k < a.size(); ++k) {
      same_splits = a[k].feature == b[k].feature && a[k].threshold == b[k].threshold;
    }
  }
  const bool pass = err_const <= 0.25 && err_zero <= 0.15 && honest && same_splits && shift_dev <= 1e-9 &&
                    antisymmetric;
  return {pass, "constant " + fmt("%.3f", err_const) + ", zero " + fmt("%.3f", err_zero) + ", honest " +
                    (honest ? "yes" : "no") + ", shift " + (same_splits ? "same splits " : "splits differ ") +
                    fmt("%.1e", shift_dev) + ", swap " + (antisymmetric ? "exact" : "inexact")};
}

// ---- 9 -------------------------------------------------------------------

Outcome bart_sanity() {
  const auto d = testsupport::make_trial(1000, 3, kSeed, [](const Eigen::VectorXd& x, int) {
    return x(0) - x(1) * x(1);
  }, 0.5);
  const auto profiles = testsupport::random_profiles(20, 3, kSeed + 1);
  BartParams params;
  params.seed = kSeed;
  const auto post = fit_bart_slearner(d, profiles, params);
  const auto again = fit_bart_slearner(d, profiles, params);
  double mean_abs = 0.0;
  double worst_identity = 0.0;
  for (const auto& p : profiles) {
    const auto est = bart_cate_normal(post, p);
    mean_abs += std::abs(est.tau_hat);
    const auto var = [](const Eigen::VectorXd& v) {
      return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
    };
    const double expected = var(post.arm_draws(p.profile_id, 1)) + var(post.arm_draws(p.profile_id, 0));
    worst_identity = std::max(worst_identity, std::abs(est.se2 - expected) / std::max(1.0, expected));
  }
  mean_abs /= static_cast<double>(profiles.size());
  const bool same = post.draws() == again.draws();
  return {mean_abs <= 0.2 && worst_identity <= 1e-14 && same,
          "mean |tau| " + fmt("%.3f", mean_abs) + ", variance identity " + fmt("%.1e", worst_identity) +
              ", determinism " + (same ? "bit exact" : "broken")};
}

// ---- 11 ------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(METACATE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const fs::path kGolden = METACATE_GOLDEN_DIR;
const std::vector<std::string> kPredictOutputs{"predictions.csv", "predictions.svg"};
const std::vector<std::string> kSimulateOutputs{"metrics.csv", "coverage.svg"};

bool produce(const fs::path& dir) {
  fs::remove_all(dir);
  const std::string common = "--seed 7 --out-dir ";
  return run_cli(common + (dir / "predict").string() + " predict --aggregates " +
                 (kGolden / "aggregates.csv").string()) == 0 &&
         run_cli(common + (dir / "simulate").string() + " simulate --config " +
                 (kGolden / "simulate.cfg").string()) == 0;
}

Outcome golden() {
  const fs::path work = fs::temp_directory_path() / "metacate_acceptance";
  if (!produce(work / "run1") || !produce(work / "run2")) return {false, "CLI run failed"};
  int matched = 0;
  int total = 0;
  std::string bad;
  const auto compare = [&](const std::string& sub, const std::vector<std::string>& files) {
    for (const auto& f : files) {
      ++total;
      const std::string a = read_file((work / "run1" / sub / f).string());
      const std::string b = read_file((work / "run2" / sub / f).string());
      const std::string g = read_file((kGolden / sub / f).string());
      if (a == b && a == g) {
        ++matched;
      } else {
        bad += " " + sub + "/" + f + (a == b ? " (differs from golden)" : " (runs differ)");
      }
    }
  };
  try {
    compare("predict", kPredictOutputs);
    compare("simulate", kSimulateOutputs);
  } catch (const Error& e) {
    return {false, e.what()};
  }
  return {matched == total, std::to_string(matched) + "/" + std::to_string(total) + " files identical" + bad};
}

int write_golden() {
  const fs::path work = fs::temp_directory_path() / "metacate_golden";
  if (!produce(work)) {
    std::fprintf(stderr, "CLI run failed\n");
    return 1;
  }
  for (const auto& [sub, files] : {std::pair{"predict", kPredictOutputs}, std::pair{"simulate", kSimulateOutputs}}) {
    fs::create_directories(kGolden / sub);
    for (const auto& f : files) fs::copy_file(work / sub / f, kGolden / sub / f, fs::copy_options::overwrite_existing);
  }
  std::printf("golden files written to %s\n", kGolden.c_str());
  return 0;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--write-golden") return write_golden();
    only.insert(std::stoi(arg));
  }
  const std::vector<Criterion> criteria{
      {1, "hierarchy calibration", hierarchy},
      {2, "desk-scale coverage, linear and honest forest",
       [] { return coverage_run(EffectDistribution::kNormal, {"linear", "forest_honest"}, 0.90); }},
      {3, "interval length grows with heterogeneity", length_trend},
      {4, "REML matches grid search", reml_grid},
      {5, "DerSimonian-Laird exact values", dl_exact},
      {6, "t quantile accuracy", t_quantiles},
      {7, "interaction OLS exactness", ols_exact},
      {8, "causal forest sanity", forest_sanity},
      {9, "BART sanity", bart_sanity},
      {10, "uniform study effects coverage",
       [] { return coverage_run(EffectDistribution::kUniform, {"linear"}, 0.88); }},
      {11, "golden CLI outputs", golden},
  };
  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %s: %s (%s) [%.1fs]\n", c.id, out.pass ? "PASS" : "FAIL", c.name,
                out.detail.c_str(), secs);
    std::fflush(stdout);
    all = all && out.pass;
  }
  return all ? 0 : 1;
}
