#include "spmix/model.hpp"

#include "spmix/copula.hpp"
#include "spmix/special.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace spmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double logit_bounded(double value, double upper, const char* name) {
  if (!(value > 0.0) || !(value < upper)) {
    throw DomainError(std::string(name) + " must lie strictly inside (0, " + std::to_string(upper) +
                      ") to be transformed");
  }
  return std::log(value) - std::log(upper - value);
}

}  // namespace

// ---------------------------------------------------------------------------
// Weibull factor

WeibullFactor::WeibullFactor(double beta) : beta_(beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("Weibull factor needs beta > 0");
  shape_ = 1.0 / beta;
  log_gamma_1p_ = special::lgamma(1.0 + beta);
}

double WeibullFactor::log_pdf(double x) const {
  if (x < 0.0 || std::isnan(x)) return kNegInf;
  if (x == 0.0) {
    if (shape_ > 1.0) return kNegInf;
    if (shape_ < 1.0) return std::numeric_limits<double>::infinity();
    return std::log(shape_) + log_gamma_1p_;
  }
  if (std::isinf(x)) return kNegInf;
  const double a = std::log(x) + log_gamma_1p_;
  return std::log(shape_) + log_gamma_1p_ + (shape_ - 1.0) * a - std::exp(shape_ * a);
}

double WeibullFactor::pdf(double x) const { return std::exp(log_pdf(x)); }

double WeibullFactor::cdf(double x) const {
  if (!(x > 0.0)) return 0.0;
  if (std::isinf(x)) return 1.0;
  return -std::expm1(-std::exp(shape_ * (std::log(x) + log_gamma_1p_)));
}

double WeibullFactor::log_cdf(double x) const {
  if (!(x > 0.0)) return kNegInf;
  if (std::isinf(x)) return 0.0;
  return special::log1mexp(std::exp(shape_ * (std::log(x) + log_gamma_1p_)));
}

double WeibullFactor::quantile(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile probability must lie in [0, 1]");
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  return std::exp(beta_ * std::log(-std::log1p(-p)) - log_gamma_1p_);
}

double WeibullFactor::sample(Rng& rng) const {
  std::exponential_distribution<double> exp1(1.0);
  return std::exp(beta_ * std::log(exp1(rng)) - log_gamma_1p_);
}

// ---------------------------------------------------------------------------
// Inverse-Gamma factor

InvGammaFactor::InvGammaFactor(double beta3) {
  if (!(beta3 > 1.0) || !std::isfinite(beta3)) throw DomainError("Inverse-Gamma factor needs beta3 > 1");
  shape_ = beta3;
  scale_ = beta3 - 1.0;
  log_norm_ = shape_ * std::log(scale_) - special::lgamma(shape_);
}

double InvGammaFactor::log_pdf(double x) const {
  if (!(x > 0.0) || std::isinf(x)) return kNegInf;
  return log_norm_ - (shape_ + 1.0) * std::log(x) - scale_ / x;
}

double InvGammaFactor::pdf(double x) const { return std::exp(log_pdf(x)); }

double InvGammaFactor::cdf(double x) const {
  if (!(x > 0.0)) return 0.0;
  if (std::isinf(x)) return 1.0;
  return special::gamma_q(shape_, scale_ / x);
}

double InvGammaFactor::survival(double x) const {
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  return special::gamma_p(shape_, scale_ / x);
}

double InvGammaFactor::quantile(double p) const {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile probability must lie in [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  return scale_ / special::gamma_q_inv(shape_, p);
}

double InvGammaFactor::quantile_upper(double q) const {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("tail probability must lie in [0, 1]");
  if (q == 0.0) return std::numeric_limits<double>::infinity();
  if (q == 1.0) return 0.0;
  return scale_ / special::gamma_p_inv(shape_, q);
}

double InvGammaFactor::sample(Rng& rng) const {
  std::gamma_distribution<double> g(shape_, 1.0);
  return scale_ / g(rng);
}

// ---------------------------------------------------------------------------

Vec scale_vector(const HyperParams& theta, const StationSet& stations) {
  if (theta.gamma.size() != stations.num_covariates() + 1) {
    throw ContractError("gamma has " + std::to_string(theta.gamma.size()) +
                        " entries but the station set has " +
                        std::to_string(stations.num_covariates()) + " covariates (+1 intercept)");
  }
  return (stations.design() * theta.gamma).array().exp().matrix();
}

TransformedHyperParams transform(const HyperParams& theta, const Bounds& bounds) {
  if (!(theta.beta3 > 1.0) || std::isinf(theta.beta3))
    throw DomainError("beta3 must lie strictly inside (1, inf) to be transformed");
  TransformedHyperParams t;
  t.gamma = theta.gamma;
  t.beta1 = logit_bounded(theta.beta1, bounds.delta1, "beta1");
  t.beta2 = logit_bounded(theta.beta2, bounds.delta2, "beta2");
  t.beta3 = -std::log(theta.beta3 - 1.0);
  t.rho = logit_bounded(theta.rho, 2.0 * bounds.delta, "rho");
  return t;
}

HyperParams untransform(const TransformedHyperParams& tt, const Bounds& bounds, const Copula& copula) {
  HyperParams theta;
  theta.gamma = tt.gamma;
  theta.beta1 = bounds.delta1 * logistic(tt.beta1);
  theta.beta2 = bounds.delta2 * logistic(tt.beta2);
  theta.beta3 = 1.0 + std::exp(-tt.beta3);
  theta.rho = 2.0 * bounds.delta * logistic(tt.rho);
  theta.copula = copula;
  return theta;
}

double log_jacobian(const TransformedHyperParams& tt, const Bounds& bounds) {
  const auto term = [](double upper, double x) { return std::log(upper) + x - 2.0 * softplus(x); };
  return term(bounds.delta1, tt.beta1) + term(bounds.delta2, tt.beta2) - tt.beta3 +
         term(2.0 * bounds.delta, tt.rho);
}

// ---------------------------------------------------------------------------

SimulatedField simulate_components(const HyperParams& theta, const StationSet& stations,
                                   Eigen::Index n, std::uint64_t seed) {
  theta.validate();
  stations.validate();
  if (n < 1) throw ContractError("simulate_field needs n >= 1");
  const Eigen::Index d = stations.size();
  const Vec alpha = scale_vector(theta, stations);
  const auto corr = CorrelationModel::build(stations, theta.rho);
  const WeibullFactor f1(theta.beta1);
  const WeibullFactor f2(theta.beta2);
  const InvGammaFactor f3(theta.beta3);

  Rng rng(seed);
  SimulatedField out;
  const Mat scores = copula_sample_scores(corr, theta.copula, n, rng);
  out.x3.resize(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double z = scores(t, j);
      out.x3(t, j) = z > 0 ? f3.quantile_upper(score_to_upper(z, theta.copula))
                           : f3.quantile(score_to_uniform(z, theta.copula));
    }
  }
  out.x2.resize(n);
  out.x1.resize(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    out.x2(t) = f2.sample(rng);
    for (Eigen::Index j = 0; j < d; ++j) out.x1(t, j) = f1.sample(rng);
  }
  out.y.resize(n, d);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index j = 0; j < d; ++j)
      out.y(t, j) = alpha(j) * out.x1(t, j) * out.x2(t) * out.x3(t, j);
  return out;
}

Mat simulate_field(const HyperParams& theta, const StationSet& stations, Eigen::Index n,
                   std::uint64_t seed) {
  return simulate_components(theta, stations, n, seed).y;
}

double hill_estimator(std::vector<double> values, std::size_t k) {
  if (k < 1 || k >= values.size()) throw ContractError("Hill estimator needs 1 <= k < sample size");
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end(),
                   std::greater<>());
  const double threshold = values[k];
  if (!(threshold > 0.0)) throw DomainError("Hill estimator needs positive order statistics");
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += std::log(values[i] / threshold);
  return sum / static_cast<double>(k);
}

}  // namespace spmix
