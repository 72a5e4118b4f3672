#pragma once

#include "spmix/sampler.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace spmix {

inline constexpr const char* kVersion = "0.1.0";

// Malformed command line or configuration (exit code 2).
struct UsageError : Error {
  using Error::Error;
};

struct RunConfig {
  SamplerConfig sampler;
  std::string stations;
  std::string observations;
  std::string out_dir = ".";
  std::string formula;  // empty: every covariate, linear
  double censor_quantile = 0.75;
  bool positive_only = false;
  std::string copula = "gaussian";
  double nu = 1.0;
  std::vector<std::string> mask;
  int chains = 2;
  double delta1 = 1.0;
  double delta2 = 1.0;
  double delta = 0.0;  // 0: maximum distance between stations
  double discard = 0.75;
  long checkpoint_every = 0;

  Copula make_copula() const;
  // Throws UsageError.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

nlohmann::json summary_json(const std::vector<struct ParameterSummary>& summary, const RunConfig& config);

// Entry point of the spmix tool. Returns 0 on success, 1 on runtime failure,
// 2 on a usage error.
int cli_main(int argc, const char* const* argv);

}  // namespace spmix
