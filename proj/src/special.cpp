#include "metacate/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "metacate/core.hpp"

namespace metacate {
namespace {

constexpr double kTiny = 1e-300;
constexpr double kEps = 1e-16;

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  return h;
}

void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError(std::string(what) + ": probability outside [0, 1]");
  }
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete_beta: a, b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double inverse_incomplete_beta(double a, double b, double p) {
  require_probability(p, "inverse_incomplete_beta");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  const double lbeta = log_beta(a, b);
  double lo = 0.0;
  double hi = 1.0;
  double x = 0.5;
  for (int iter = 0; iter < 1000; ++iter) {
    const double f = incomplete_beta(a, b, x) - p;
    if (f == 0.0) return x;
    if (f < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    const double density =
        std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lbeta);
    double next = x - f / density;
    if (!std::isfinite(next) || next <= lo || next >= hi) {
      // Geometric bisection once the bracket is strictly positive so tiny
      // tail quantiles are reached quickly.
      next = (lo > 0.0 && hi / lo > 4.0) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    }
    if (std::fabs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * next ||
        hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) {
      return next;
    }
    x = next;
  }
  return x;
}

double incomplete_gamma(double a, double x) {
  if (!(a > 0.0)) throw DomainError("incomplete_gamma: a must be positive");
  if (x <= 0.0) return 0.0;
  const double log_front = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 100000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * kEps) break;
    }
    return sum * std::exp(log_front);
  }
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return 1.0 - std::exp(log_front) * h;
}

double t_cdf(double df, double t) {
  if (!(df > 0.0)) throw DomainError("t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

double t_quantile(int df, double p) {
  if (df < 1) throw DomainError("t_quantile: df must be >= 1, got " + std::to_string(df));
  if (!(p > 0.0 && p < 1.0)) throw DomainError("t_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  if (df == 1) return std::tan(std::numbers::pi * (p - 0.5));
  if (df == 2) return (2.0 * p - 1.0) / std::sqrt(2.0 * p * (1.0 - p));

  const double nu = df;
  const double two_tail = 2.0 * std::min(p, 1.0 - p);  // P(|T| > t)
  double t;
  if (two_tail < 0.5) {
    // Tail branch: solve I_x(nu/2, 1/2) = two_tail for x = nu / (nu + t^2).
    const double x = inverse_incomplete_beta(0.5 * nu, 0.5, two_tail);
    t = std::sqrt(nu * (1.0 - x) / x);
  } else {
    // Central branch: solve I_y(1/2, nu/2) = 1 - two_tail for y = t^2 / (nu + t^2).
    const double y = inverse_incomplete_beta(0.5, 0.5 * nu, std::fabs(2.0 * p - 1.0));
    t = std::sqrt(nu * y / (1.0 - y));
  }
  return p > 0.5 ? t : -t;
}

double chi_square_quantile(double df, double p) {
  if (!(df > 0.0)) throw DomainError("chi_square_quantile: df must be positive");
  if (!(p > 0.0 && p < 1.0)) throw DomainError("chi_square_quantile: p must lie in (0, 1)");
  double lo = 0.0;
  double hi = std::max(1.0, df);
  while (incomplete_gamma(0.5 * df, 0.5 * hi) < p) hi *= 2.0;
  for (int iter = 0; iter < 200 && hi - lo > 1e-14 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (incomplete_gamma(0.5 * df, 0.5 * mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  for (int iter = 0; iter < 200 && hi - lo > 1e-15; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace metacate
