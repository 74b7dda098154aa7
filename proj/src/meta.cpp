#include "metacate/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "metacate/special.hpp"

namespace metacate {
namespace {

constexpr double kRemlTolerance = 1e-10;
constexpr int kRemlScanPoints = 64;

double max_se2(const MetaInput& input) {
  double m = 0.0;
  for (const auto& e : input.estimates) m = std::max(m, e.se2);
  return m;
}

double min_se2(const MetaInput& input) {
  double m = input.estimates.front().se2;
  for (const auto& e : input.estimates) m = std::min(m, e.se2);
  return m;
}

bool all_estimates_equal(const MetaInput& input) {
  const double first = input.estimates.front().tau_hat;
  return std::all_of(input.estimates.begin(), input.estimates.end(),
                     [first](const StudyCateEstimate& e) { return e.tau_hat == first; });
}

double sample_variance_of_estimates(const MetaInput& input) {
  const double k = static_cast<double>(input.k());
  double mean = 0.0;
  for (const auto& e : input.estimates) mean += e.tau_hat;
  mean /= k;
  double ss = 0.0;
  for (const auto& e : input.estimates) ss += (e.tau_hat - mean) * (e.tau_hat - mean);
  return ss / (k - 1.0);
}

// Scan-then-golden-section maximization of a scalar function on [lo, hi].
// Returns the maximizer; the lower end is checked explicitly.
template <typename F>
double maximize_on_interval(F&& f, double lo, double hi) {
  if (hi <= lo) return lo;
  const double step = (hi - lo) / kRemlScanPoints;
  int best = 0;
  double best_value = f(lo);
  for (int i = 1; i <= kRemlScanPoints; ++i) {
    const double v = f(lo + step * i);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  double a = lo + step * std::max(best - 1, 0);
  double b = lo + step * std::min(best + 1, kRemlScanPoints);
  if (best == kRemlScanPoints) b = hi;

  constexpr double kInvPhi = 0.6180339887498949;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > kRemlTolerance) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
  }
  double x = 0.5 * (a + b);
  double fx = f(x);
  if (f(lo) >= fx) return lo;
  if (f(hi) > fx) return hi;
  return x;
}

}  // namespace

void check_meta_input(const MetaInput& input) {
  if (input.k() < 2) {
    throw DomainError("meta-analysis of profile " + std::to_string(input.profile_id) +
                      " needs K >= 2 studies, got " + std::to_string(input.k()));
  }
  for (const auto& e : input.estimates) {
    if (e.profile_id != input.profile_id) {
      throw DomainError("estimate for profile " + std::to_string(e.profile_id) +
                        " mixed into profile " + std::to_string(input.profile_id));
    }
    if (!std::isfinite(e.tau_hat) || !std::isfinite(e.se2) || e.se2 < 0.0) {
      throw DomainError("study " + std::to_string(e.study_id) + ", profile " +
                        std::to_string(e.profile_id) +
                        ": estimate must be finite with se2 >= 0");
    }
  }
}

double restricted_log_likelihood(double theta2, const MetaInput& input) {
  if (!(theta2 >= 0.0)) throw DomainError("restricted_log_likelihood: theta2 < 0");
  double sum_w = 0.0;
  double sum_wt = 0.0;
  double sum_log = 0.0;
  for (const auto& e : input.estimates) {
    const double total = e.se2 + theta2;
    if (!(total > 0.0)) {
      throw DomainError("restricted_log_likelihood: zero total variance");
    }
    sum_w += 1.0 / total;
    sum_wt += e.tau_hat / total;
    sum_log += std::log(total);
  }
  const double mu = sum_wt / sum_w;
  double resid = 0.0;
  for (const auto& e : input.estimates) {
    const double d = e.tau_hat - mu;
    resid += d * d / (e.se2 + theta2);
  }
  return -0.5 * sum_log - 0.5 * std::log(sum_w) - 0.5 * resid;
}

double reml_theta2(const MetaInput& input) {
  check_meta_input(input);
  if (all_estimates_equal(input)) return 0.0;

  // Zero within-study variance makes the likelihood undefined at 0.
  const double lo = min_se2(input) > 0.0 ? 0.0 : 1e-12;
  double hi = 10.0 * sample_variance_of_estimates(input) + max_se2(input);
  auto objective = [&input](double t) { return restricted_log_likelihood(t, input); };
  for (int attempt = 0; attempt < 2; ++attempt) {
    const double x = maximize_on_interval(objective, lo, hi);
    if (hi - x > 10.0 * kRemlTolerance) return x == 1e-12 ? 0.0 : x;
    hi *= 2.0;
  }
  throw EstimationError("REML maximizer for profile " + std::to_string(input.profile_id) +
                        " sits on the search bound after doubling");
}

double dl_theta2(const MetaInput& input) {
  check_meta_input(input);
  double sum_w = 0.0;
  double sum_w2 = 0.0;
  double sum_wt = 0.0;
  for (const auto& e : input.estimates) {
    if (e.se2 == 0.0) {
      throw DomainError("dl_theta2: study " + std::to_string(e.study_id) +
                        " has zero variance (infinite weight)");
    }
    const double w = 1.0 / e.se2;
    sum_w += w;
    sum_w2 += w * w;
    sum_wt += w * e.tau_hat;
  }
  const double mean = sum_wt / sum_w;
  double q = 0.0;
  for (const auto& e : input.estimates) {
    const double d = e.tau_hat - mean;
    q += d * d / e.se2;
  }
  const double k = static_cast<double>(input.k());
  return std::max(0.0, (q - (k - 1.0)) / (sum_w - sum_w2 / sum_w));
}

PooledCate pool_cate(const MetaInput& input, double theta2) {
  check_meta_input(input);
  if (!(theta2 >= 0.0)) throw DomainError("pool_cate: theta2 < 0");
  PooledCate pooled;
  pooled.profile_id = input.profile_id;
  pooled.theta2 = theta2;
  pooled.k_studies = static_cast<int>(input.k());
  pooled.weights.reserve(input.k());

  const bool degenerate =
      std::any_of(input.estimates.begin(), input.estimates.end(),
                  [theta2](const StudyCateEstimate& e) { return e.se2 + theta2 == 0.0; });
  if (degenerate) {
    // Zero-variance studies carry all the weight; they must agree.
    std::optional<double> common;
    for (const auto& e : input.estimates) {
      const bool exact = e.se2 + theta2 == 0.0;
      pooled.weights.push_back(exact ? 1.0 : 0.0);
      if (!exact) continue;
      if (common && *common != e.tau_hat) {
        throw EstimationError("profile " + std::to_string(input.profile_id) +
                              ": zero-variance studies disagree (degenerate variance)");
      }
      common = e.tau_hat;
    }
    pooled.tau_pooled = *common;
    pooled.var_pooled = 0.0;
    return pooled;
  }

  double sum_w = 0.0;
  double sum_wt = 0.0;
  for (const auto& e : input.estimates) {
    const double w = 1.0 / (e.se2 + theta2);
    pooled.weights.push_back(w);
    sum_w += w;
    sum_wt += w * e.tau_hat;
  }
  pooled.tau_pooled = sum_wt / sum_w;
  pooled.var_pooled = 1.0 / sum_w;
  return pooled;
}

PredictionInterval prediction_interval(const PooledCate& pooled, double alpha,
                                       int k_studies) {
  if (k_studies < 3) {
    throw EstimationError("prediction interval for profile " +
                          std::to_string(pooled.profile_id) + " needs K >= 3 studies, got " +
                          std::to_string(k_studies));
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("prediction_interval: alpha outside (0, 1)");
  const int df = k_studies - 2;
  const double half =
      t_quantile(df, 1.0 - alpha / 2.0) * std::sqrt(pooled.var_pooled + pooled.theta2);
  PredictionInterval pi;
  pi.profile_id = pooled.profile_id;
  pi.center = pooled.tau_pooled;
  pi.lower = pooled.tau_pooled - half;
  pi.upper = pooled.tau_pooled + half;
  pi.level = 1.0 - alpha;
  pi.df = df;
  return pi;
}

}  // namespace metacate
