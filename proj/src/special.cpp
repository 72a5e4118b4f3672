#include "spmix/special.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>

namespace spmix::special {

namespace {

using namespace boost::math::policies;
using Policy = policy<overflow_error<ignore_error>, underflow_error<ignore_error>,
                      denorm_error<ignore_error>, evaluation_error<ignore_error>,
                      promote_double<false>>;

constexpr double kSqrt2 = 1.41421356237309504880;

}  // namespace

double lgamma(double x) { return boost::math::lgamma(x, Policy()); }

double digamma(double x) { return boost::math::digamma(x, Policy()); }

double log1mexp(double x) {
  // Maechler's switch point.
  return x < 0.6931471805599453 ? std::log(-std::expm1(-x)) : std::log1p(-std::exp(-x));
}

double normal_cdf(double z) { return 0.5 * boost::math::erfc(-z / kSqrt2, Policy()); }

double normal_log_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

double normal_quantile(double p) { return -kSqrt2 * boost::math::erfc_inv(2.0 * p, Policy()); }

double normal_quantile_upper(double q) { return kSqrt2 * boost::math::erfc_inv(2.0 * q, Policy()); }

double student_t_cdf(double t, double nu) {
  boost::math::students_t_distribution<double, Policy> dist(nu);
  return t < 0 ? boost::math::cdf(dist, t) : 1.0 - boost::math::cdf(boost::math::complement(dist, t));
}

double student_t_log_pdf(double t, double nu) {
  return lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * (std::log(nu) + kLogPi) -
         0.5 * (nu + 1.0) * std::log1p(t * t / nu);
}

double student_t_quantile(double p, double nu) {
  boost::math::students_t_distribution<double, Policy> dist(nu);
  return boost::math::quantile(dist, p);
}

double student_t_quantile_upper(double q, double nu) {
  boost::math::students_t_distribution<double, Policy> dist(nu);
  return boost::math::quantile(boost::math::complement(dist, q));
}

double gamma_p(double a, double x) { return boost::math::gamma_p(a, x, Policy()); }
double gamma_q(double a, double x) { return boost::math::gamma_q(a, x, Policy()); }
double gamma_p_inv(double a, double p) { return boost::math::gamma_p_inv(a, p, Policy()); }
double gamma_q_inv(double a, double q) { return boost::math::gamma_q_inv(a, q, Policy()); }

}  // namespace spmix::special
