#pragma once

#include "spmix/model.hpp"
#include "spmix/types.hpp"

#include <Eigen/Cholesky>

#include <cstdint>

namespace spmix {

/// Exponential correlation Sigma_ij = exp(-|s_i - s_j| / rho) with a cached
/// Cholesky factor, log-determinant and precision matrix.
///
/// Immutable once built. A change of rho means building a new model.
class CorrelationModel {
 public:
  static CorrelationModel build(const StationSet& stations, double rho);
  static CorrelationModel build(const Mat& distances, double rho);
  // Identity correlation (independence copula) of dimension d.
  static CorrelationModel identity(Eigen::Index d);

  Eigen::Index dim() const { return sigma_.rows(); }
  double rho() const { return rho_; }
  const Mat& sigma() const { return sigma_; }
  const Mat& chol() const { return chol_; }  // lower triangular
  const Mat& precision() const { return precision_; }
  double logdet() const { return logdet_; }
  // Diagonal jitter that had to be added for a successful factorisation.
  double jitter() const { return jitter_; }

 private:
  double rho_ = 0.0;
  double jitter_ = 0.0;
  double logdet_ = 0.0;
  Mat sigma_;
  Mat chol_;
  Mat precision_;
};

// Copula log-densities at uniform scores v in (0,1)^d. DomainError when an
// entry is 0 or 1.
double gaussian_copula_logdensity(const Vec& v, const CorrelationModel& corr);
double t_copula_logdensity(const Vec& v, const CorrelationModel& corr, double nu);
double copula_logdensity(const Vec& v, const CorrelationModel& corr, const Copula& copula);

// Same densities expressed on the latent scale z (normal or t scores).
// When grad is non-null it receives d/dz of the log-density.
double copula_logdensity_scores(const Vec& z, const CorrelationModel& corr, const Copula& copula,
                                Vec* grad = nullptr);

// Joint log-density of one replicate of X3: copula term at F3(x3) plus the
// Inverse-Gamma marginal log-densities.
double x3_joint_logdensity(const Vec& x3, double beta3, const CorrelationModel& corr,
                           const Copula& copula);

// Marginal pieces of a latent X3 coordinate held on log scale.
struct LatentScore {
  double z = 0.0;            // copula score, Phi^{-1}(F3(x)) or T_nu^{-1}(F3(x))
  double dz_dlog = 0.0;      // dz / d log x
  double log_marginal = 0.0; // log f3(x) + log x
  double dlog_marginal = 0.0;
  bool interior = true;      // false when F3(x) rounds to 0 or 1
};
LatentScore latent_score(double log_x, const InvGammaFactor& f3, const Copula& copula);

// Correlated latent scores (normal scores, or t scores sharing one mixing
// variable per row). n x d.
Mat copula_sample_scores(const CorrelationModel& corr, const Copula& copula, Eigen::Index n, Rng& rng);
// Score -> uniform, and score -> upper tail probability (accurate for large z).
double score_to_uniform(double z, const Copula& copula);
double score_to_upper(double z, const Copula& copula);

// n x d matrix of copula draws with uniform margins.
Mat copula_sample(const CorrelationModel& corr, const Copula& copula, Eigen::Index n,
                  std::uint64_t seed);

}  // namespace spmix
