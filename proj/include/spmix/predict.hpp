#pragma once

#include "spmix/likelihood.hpp"
#include "spmix/sampler.hpp"
#include "spmix/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace spmix {

struct Cell {
  Eigen::Index t;
  Eigen::Index j;
  bool operator==(const Cell&) const = default;
};

// Posterior predictive draws, one row per latent snapshot and one column per cell.
struct PredictiveDraws {
  Mat draws;
  std::vector<Cell> cells;
  std::vector<long> iterations;

  Eigen::Index num_draws() const { return draws.rows(); }
  Eigen::Index num_cells() const { return draws.cols(); }
  void append(const PredictiveDraws& more);
};

// Every cell with u = +inf at the given sites (all sites when empty).
std::vector<Cell> censored_cells(const ExceedanceDataset& data, const std::vector<Eigen::Index>& sites = {});

// Hyperparameters of the trace row recorded at `iteration`.
HyperParams trace_params(const ChainTrace& trace, long iteration, const Copula& copula);

/// Y = alpha_j x1 x2_t x3_tj per latent snapshot, x1 drawn fresh, x2 and x3
/// from the snapshot. Cells must have u = +inf.
PredictiveDraws posterior_predict(const ChainTrace& trace, const Posterior& post, const std::vector<Cell>& cells,
                                  std::uint64_t seed);

/// Prediction at stations outside the fitted set. x3 at the new sites is drawn
/// from its conditional copula distribution given the snapshot's x3 at the
/// fitted sites. Columns are ordered time-major: cell (t, k) for new site k.
/// Covariates of `sites` must be on the same (standardized) scale as the fit.
PredictiveDraws predict_new_sites(const ChainTrace& trace, const Posterior& post, const StationSet& sites,
                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tail dependence.

struct ChiEstimate {
  double u = 0.0;
  double chi = 0.0;
  double mc_se = 0.0;
  long joint = 0;      // joint exceedances
  long marginal = 0;   // exceedances of b
  bool low_count = false;
};

// Pr{A > qa(u) | B > qb(u)} with type-7 empirical quantiles.
ChiEstimate chi_u_empirical(std::span<const double> a, std::span<const double> b, double u);

// Monte Carlo chi(u) for the station pair under the model.
std::vector<ChiEstimate> chi_u_model(const HyperParams& theta, const StationSet& stations,
                                     std::pair<Eigen::Index, Eigen::Index> pair, const std::vector<double>& u_grid,
                                     Eigen::Index samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scores.

double crps_sample(std::span<const double> draws, double y);
// Threshold-weighted CRPS with weight Phi((z - mean) / sd). sd = 0 gives the
// step weight 1{z > mean}; mean = -inf gives weight 1.
double twcrps(std::span<const double> draws, double y, double weight_mean, double weight_sd = 10.0);

enum class PointPredictor { Mean, Median };
PointPredictor parse_point_predictor(const std::string& name);

double point_prediction(std::span<const double> draws, PointPredictor predictor);
// Mean over cells of (point prediction - truth)^2.
double mpe(const PredictiveDraws& predictive, const Vec& truth, PointPredictor predictor = PointPredictor::Mean);

struct CellScore {
  Cell cell;
  double prediction;
  double truth;
  double crps;
  double twcrps;
};

// weight_mean holds one entry per cell (the marginal threshold at the cell's site).
std::vector<CellScore> score_cells(const PredictiveDraws& predictive, const Vec& truth, const Vec& weight_mean,
                                   double weight_sd = 10.0, PointPredictor predictor = PointPredictor::Mean);

}  // namespace spmix
