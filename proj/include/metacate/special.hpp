#pragma once

namespace metacate {

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Inverse of I_x(a, b) in x. Throws DomainError unless p is in [0, 1].
double inverse_incomplete_beta(double a, double b, double p);

/// Regularized lower incomplete gamma function P(a, x).
double incomplete_gamma(double a, double x);

double t_cdf(double df, double t);

/// Student-t inverse CDF. Accurate to about 1e-12 absolute for the
/// quantiles used by prediction intervals. Throws DomainError when df < 1
/// or p is outside (0, 1).
double t_quantile(int df, double p);

/// Chi-square inverse CDF with df degrees of freedom.
double chi_square_quantile(double df, double p);

double normal_cdf(double x);

double normal_quantile(double p);

}  // namespace metacate
