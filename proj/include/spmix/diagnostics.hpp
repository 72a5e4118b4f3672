#pragma once

#include "spmix/sampler.hpp"
#include "spmix/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace spmix {

struct EssResult {
  double value = 0.0;
  bool constant = false;  // zero-variance chain; value is 0
};

// Effective sample size from Geyer's initial positive sequence estimator of
// the integrated autocorrelation time. Requires at least 10 draws.
EssResult ess(std::span<const double> chain);
// One entry per trace column, divided by the chain's recorded wall-clock minutes.
std::vector<double> ess_per_minute(const ChainTrace& trace, double discard_fraction = 0.75);

// Gelman-Rubin potential scale reduction over equal-length chains (longer
// chains are truncated to the shortest).
double rhat(const std::vector<std::vector<double>>& chains);

// Linear interpolation between order statistics (R type 7).
double empirical_quantile(std::vector<double> values, double q);

struct ParameterSummary {
  std::string name;
  double mean;
  double sd;
  double lower;  // 2.5%
  double upper;  // 97.5%
  double ess;
  double ess_per_minute;
  double rhat;
  bool constant;
};

// Pools the draws kept after discarding the first `discard_fraction` of each chain.
std::vector<ParameterSummary> summarize(const std::vector<ChainTrace>& chains, double discard_fraction = 0.75);

}  // namespace spmix
