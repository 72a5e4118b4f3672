#pragma once

#include "spmix/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace spmix {

using Rng = std::mt19937_64;

/// Unit-mean Weibull factor F1/F2 with shape 1/beta and scale 1/Gamma(1+beta).
///
/// Sampling uses the equivalent representation E^beta / Gamma(1+beta) with
/// E ~ Exp(1). Densities are evaluated on log scale.
class WeibullFactor {
 public:
  explicit WeibullFactor(double beta);

  double beta() const { return beta_; }
  double shape() const { return shape_; }
  double scale() const { return std::exp(-log_gamma_1p_); }
  // log Gamma(1 + beta), i.e. -log(scale).
  double log_gamma_1p() const { return log_gamma_1p_; }

  double log_pdf(double x) const;
  double pdf(double x) const;
  double cdf(double x) const;
  double log_cdf(double x) const;
  double quantile(double p) const;
  double sample(Rng& rng) const;

 private:
  double beta_;
  double shape_;
  double log_gamma_1p_;
};

/// Unit-mean Inverse-Gamma factor F3 with shape beta3 and scale beta3 - 1.
class InvGammaFactor {
 public:
  explicit InvGammaFactor(double beta3);

  double shape() const { return shape_; }
  double scale() const { return scale_; }
  // shape * log(scale) - lgamma(shape)
  double log_norm() const { return log_norm_; }

  double log_pdf(double x) const;
  double pdf(double x) const;
  double cdf(double x) const;
  double survival(double x) const;
  double quantile(double p) const;
  // Quantile given the upper-tail probability, accurate for q near 0.
  double quantile_upper(double q) const;
  double sample(Rng& rng) const;

 private:
  double shape_;
  double scale_;
  double log_norm_;  // shape * log(scale) - lgamma(shape)
};

// alpha = exp([1 | Z] gamma), one entry per station.
Vec scale_vector(const HyperParams& theta, const StationSet& stations);

// Maps into the unconstrained sampler coordinates. Throws DomainError when a
// bounded parameter sits on (or outside) its boundary.
TransformedHyperParams transform(const HyperParams& theta, const Bounds& bounds);
HyperParams untransform(const TransformedHyperParams& tt, const Bounds& bounds,
                        const Copula& copula = Copula::gaussian());
// log |d theta / d theta_tilde|, summed over the bounded coordinates.
double log_jacobian(const TransformedHyperParams& tt, const Bounds& bounds);

struct SimulatedField {
  Mat y;   // n x d
  Mat x1;  // n x d
  Vec x2;  // n
  Mat x3;  // n x d
};

SimulatedField simulate_components(const HyperParams& theta, const StationSet& stations,
                                   Eigen::Index n, std::uint64_t seed);
Mat simulate_field(const HyperParams& theta, const StationSet& stations, Eigen::Index n,
                   std::uint64_t seed);

// Hill estimator of the tail index using the k largest values.
double hill_estimator(std::vector<double> values, std::size_t k);

}  // namespace spmix
