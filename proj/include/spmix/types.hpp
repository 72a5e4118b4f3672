#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace spmix {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using MaskVec = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;
// Read-only vector view that also binds to matrix rows.
using VecView = Eigen::Ref<const Vec, 0, Eigen::InnerStride<>>;
using MaskView = Eigen::Ref<const MaskVec, 0, Eigen::InnerStride<>>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error hierarchy. Everything thrown by the library derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : Error {  // dimension mismatch, bad arguments
  using Error::Error;
};
struct DomainError : Error {  // parameter outside its support
  using Error::Error;
};
struct NumericalError : Error {  // Cholesky failure, divergence
  using Error::Error;
};
struct DataError : Error {  // inconsistent observations
  using Error::Error;
};

// A log target value. std::nullopt is the reject sentinel: the state lies
// outside the support and must never be accepted.
using LogTarget = std::optional<double>;
inline constexpr std::nullopt_t kReject = std::nullopt;

enum class CopulaFamily { Gaussian, StudentT };

struct Copula {
  CopulaFamily family = CopulaFamily::Gaussian;
  double nu = 1.0;  // degrees of freedom, StudentT only

  static Copula gaussian() { return {CopulaFamily::Gaussian, 1.0}; }
  static Copula student_t(double nu);
  std::string name() const;
};

// Upper bounds of the bounded hyperparameters: beta1 in (0, delta1),
// beta2 in (0, delta2), rho in (0, 2 * delta).
struct Bounds {
  double delta1 = 1.0;
  double delta2 = 1.0;
  double delta = 1.0;
};

struct HyperParams {
  Vec gamma;  // intercept first, then one coefficient per covariate
  double beta1 = 0.5;
  double beta2 = 0.5;
  double beta3 = 5.0;
  double rho = 0.5;
  Copula copula;

  double tail_index() const { return 1.0 / beta3; }
  // Throws DomainError when an invariant fails. With bounds, also checks the
  // upper limits.
  void validate() const;
  void validate(const Bounds& bounds) const;
  // gamma..., beta1, beta2, beta3, rho
  std::vector<std::string> names() const;
  Vec flatten() const;
};

// Unconstrained parameterisation used by the sampler.
struct TransformedHyperParams {
  Vec gamma;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
  double rho = 0.0;

  Vec flatten() const;
  static TransformedHyperParams unflatten(const Vec& v);
};

struct StationSet {
  std::vector<std::string> ids;
  Mat coords;  // d x 2
  Mat Z;       // d x p covariates (p may be 0)

  Eigen::Index size() const { return coords.rows(); }
  Eigen::Index num_covariates() const { return Z.cols(); }
  // Design matrix [1 | Z], d x (p + 1).
  Mat design() const;
  Mat distances() const;
  double max_distance() const;
  void validate() const;
  StationSet subset(const std::vector<Eigen::Index>& rows) const;
};

struct ExceedanceDataset {
  Mat y;  // n x d, values >= 0 (ignored where u is +inf)
  Mat u;  // n x d thresholds, +inf for missing or masked cells
  Mask e;  // n x d

  Eigen::Index num_times() const { return y.rows(); }
  Eigen::Index num_sites() const { return y.cols(); }

  // Builds e from y and u.
  static ExceedanceDataset from_thresholds(Mat y, Mat u);
  void validate() const;
  ExceedanceDataset rows(Eigen::Index begin, Eigen::Index count) const;
};

// Latent factors on log scale: log_x2 (n), log_x3 (n x d).
struct LatentState {
  Vec log_x2;
  Mat log_x3;

  static LatentState ones(Eigen::Index n, Eigen::Index d) {
    return {Vec::Zero(n), Mat::Zero(n, d)};
  }
  void validate() const;
};

}  // namespace spmix
