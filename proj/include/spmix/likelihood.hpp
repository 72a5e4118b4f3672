#pragma once

#include "spmix/copula.hpp"
#include "spmix/model.hpp"
#include "spmix/types.hpp"

#include <memory>
#include <span>
#include <vector>

namespace spmix {

// Independent hyperpriors: gamma_l ~ N(0, gamma_variance); beta1, beta2 and
// rho uniform on their bounded supports; beta3 ~ Gamma(shape, rate).
struct PriorSpec {
  double gamma_variance = 100.0;
  double beta3_shape = 1.0 / 3.0;
  double beta3_rate = 1.0 / 100.0;

  LogTarget log_prior(const HyperParams& theta, const Bounds& bounds) const;
};

// Hyperparameter blocks updated jointly by the sampler.
enum class Block { Gamma = 0, Beta1 = 1, Beta2 = 2, ShapeRange = 3 };
inline constexpr int kNumHyperBlocks = 4;
const char* block_name(Block b);

Vec block_values(const TransformedHyperParams& tt, Block b);
void set_block_values(TransformedHyperParams& tt, Block b, const Vec& values);

// Hyperparameters together with everything derived from them that the
// likelihood needs: log scale vector, factor distributions and correlation.
struct ParamCache {
  TransformedHyperParams tt;
  HyperParams theta;
  Vec log_alpha;
  WeibullFactor f1{1.0};
  WeibullFactor f2{1.0};
  InvGammaFactor f3{2.0};
  std::shared_ptr<const CorrelationModel> corr;
};

// Gradient of the log-posterior split into the part that is a sum over time
// points (subsampled in SGLD) and the hyperprior + Jacobian part.
struct HyperGradient {
  Vec data;
  Vec prior;
  Vec total() const { return data + prior; }
};

struct LatentGradient {
  Vec log_x2;  // one entry per batch time
  Mat log_x3;  // batch size x d
};

/// Censored augmented posterior of the product mixture model.
///
/// Latent factors are held on log scale and every latent term includes the
/// log-transform Jacobian, so the target is a density in (log x2, log x3).
/// Hyperparameters enter through the unconstrained parameterisation.
class Posterior {
 public:
  Posterior(ExceedanceDataset data, StationSet stations, Copula copula, Bounds bounds,
            PriorSpec priors = {});

  const ExceedanceDataset& data() const { return data_; }
  const StationSet& stations() const { return stations_; }
  const Mat& design() const { return design_; }
  const Mat& distances() const { return distances_; }
  const Copula& copula() const { return copula_; }
  const Bounds& bounds() const { return bounds_; }
  const PriorSpec& priors() const { return priors_; }
  Eigen::Index num_times() const { return data_.num_times(); }
  Eigen::Index num_sites() const { return data_.num_sites(); }
  Eigen::Index num_gamma() const { return design_.cols(); }

  ParamCache params(const TransformedHyperParams& tt) const;
  // Rebuilds only what changed relative to prev; the Cholesky factor is shared
  // when rho is unchanged.
  ParamCache params(const TransformedHyperParams& tt, const ParamCache& prev) const;

  // Per-time terms. glog_s receives d/d log s_tj where s_tj = alpha_j x2t x3tj.
  double obs_term(const ParamCache& p, double log_x2, const VecView& log_x3,
                  Eigen::Index t, Vec* glog_s = nullptr) const;
  double x2_term(const ParamCache& p, double log_x2, double* grad = nullptr) const;
  LogTarget x3_term(const ParamCache& p, const VecView& log_x3,
                    Vec* grad = nullptr) const;
  LogTarget time_term(const ParamCache& p, const LatentState& latent, Eigen::Index t) const;

  LogTarget log_prior_jacobian(const ParamCache& p) const;
  LogTarget log_posterior(const ParamCache& p, const LatentState& latent) const;
  // Sum over the batch of the per-time terms.
  LogTarget batch_log_target(const ParamCache& p, const LatentState& latent,
                             std::span<const Eigen::Index> batch) const;
  // Log-posterior restricted to the terms that depend on the given block. Its
  // differences across values of that block equal log-posterior differences.
  LogTarget block_log_target(const ParamCache& p, const LatentState& latent, Block block) const;

  LatentGradient grad_latent(const ParamCache& p, const LatentState& latent,
                             std::span<const Eigen::Index> batch) const;
  // Gradient on the transformed scale. The data part is the unscaled sum over
  // the batch. Throws ContractError for Block::ShapeRange.
  HyperGradient grad_hyper(const ParamCache& p, const LatentState& latent, Block block,
                           std::span<const Eigen::Index> batch) const;

  std::vector<Eigen::Index> all_times() const;

 private:
  ExceedanceDataset data_;
  StationSet stations_;
  Mat design_;
  Mat distances_;
  Copula copula_;
  Bounds bounds_;
  PriorSpec priors_;
};

// ---------------------------------------------------------------------------
// Free-function forms on the natural scale.

// Contribution of one time point: exceedance densities, censored CDFs, f2 and
// the joint density of x3 (no log-transform Jacobian). -inf when the latent
// state is outside the support.
double loglik_time(const HyperParams& theta, const Vec& alpha, double log_x2t, const VecView& log_x3t,
                   const VecView& yt, const MaskView& et, const VecView& ut,
                   const CorrelationModel& corr);
double loglik_total(const HyperParams& theta, const LatentState& latent, const ExceedanceDataset& data,
                    const StationSet& stations, const CorrelationModel& corr);
LogTarget log_posterior(const TransformedHyperParams& tt, const LatentState& latent,
                        const ExceedanceDataset& data, const StationSet& stations,
                        const PriorSpec& priors, const Bounds& bounds,
                        const Copula& copula = Copula::gaussian());

}  // namespace spmix
