#pragma once

// Scalar special functions shared by the model, copula and scoring code.
// Thin wrappers over Boost.Math with a non-throwing overflow policy.

namespace spmix::special {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kLogPi = 1.14472988584940017414;

double lgamma(double x);
double digamma(double x);

// log(1 - exp(-x)) for x > 0, accurate for both small and large x.
double log1mexp(double x);

double normal_cdf(double z);
double normal_log_pdf(double z);
// Lower-tail quantile. p must lie strictly inside (0, 1).
double normal_quantile(double p);
// Quantile of the upper tail: returns z with 1 - Phi(z) = q.
double normal_quantile_upper(double q);

double student_t_cdf(double t, double nu);
double student_t_log_pdf(double t, double nu);
double student_t_quantile(double p, double nu);
double student_t_quantile_upper(double q, double nu);

// Regularised incomplete gamma functions P(a, x) and Q(a, x) = 1 - P(a, x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);
double gamma_p_inv(double a, double p);
double gamma_q_inv(double a, double q);

}  // namespace spmix::special
