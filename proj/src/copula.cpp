#include "spmix/copula.hpp"

#include "spmix/special.hpp"

#include <cmath>
#include <sstream>

namespace spmix {

namespace {

constexpr double kInitialJitter = 1e-8;
constexpr int kJitterEscalations = 3;

void check_unit_interval(const Vec& v) {
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (!(v(j) > 0.0 && v(j) < 1.0)) {
      std::ostringstream os;
      os << "copula argument v[" << j << "] = " << v(j) << " is not strictly inside (0, 1)";
      throw DomainError(os.str());
    }
  }
}

std::string closest_pair(const Mat& sigma) {
  Eigen::Index bi = 0, bj = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < sigma.rows(); ++i)
    for (Eigen::Index j = i + 1; j < sigma.cols(); ++j)
      if (sigma(i, j) > best) {
        best = sigma(i, j);
        bi = i;
        bj = j;
      }
  std::ostringstream os;
  os << "sites " << bi << " and " << bj << " (correlation " << best << ")";
  return os.str();
}

}  // namespace

CorrelationModel CorrelationModel::build(const StationSet& stations, double rho) {
  stations.validate();
  return build(stations.distances(), rho);
}

CorrelationModel CorrelationModel::build(const Mat& distances, double rho) {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw DomainError("correlation range rho must be > 0");
  if (distances.rows() != distances.cols() || distances.rows() < 1)
    throw ContractError("distance matrix must be square and non-empty");
  CorrelationModel m;
  m.rho_ = rho;
  m.sigma_ = (-distances.array() / rho).exp().matrix();
  const Eigen::Index d = m.sigma_.rows();

  Eigen::LLT<Mat> llt(m.sigma_);
  double jitter = kInitialJitter;
  for (int attempt = 0; llt.info() != Eigen::Success; ++attempt) {
    if (attempt > kJitterEscalations) {
      throw NumericalError("correlation matrix is not positive definite after jitter " +
                           std::to_string(jitter / 10.0) + "; nearly duplicate " +
                           closest_pair(m.sigma_));
    }
    m.jitter_ = jitter;
    llt.compute(m.sigma_ + jitter * Mat::Identity(d, d));
    jitter *= 10.0;
  }
  m.chol_ = llt.matrixL();
  m.logdet_ = 2.0 * m.chol_.diagonal().array().log().sum();
  m.precision_ = llt.solve(Mat::Identity(d, d));
  return m;
}

CorrelationModel CorrelationModel::identity(Eigen::Index d) {
  CorrelationModel m;
  m.rho_ = 0.0;
  m.sigma_ = Mat::Identity(d, d);
  m.chol_ = Mat::Identity(d, d);
  m.precision_ = Mat::Identity(d, d);
  return m;
}

double copula_logdensity_scores(const Vec& z, const CorrelationModel& corr, const Copula& copula,
                                Vec* grad) {
  const Eigen::Index d = z.size();
  if (d != corr.dim()) throw ContractError("copula dimension mismatch");
  const Vec pz = corr.precision() * z;
  const double quad = z.dot(pz);

  if (copula.family == CopulaFamily::Gaussian) {
    if (grad) *grad = z - pz;
    return -0.5 * corr.logdet() - 0.5 * (quad - z.squaredNorm());
  }

  const double nu = copula.nu;
  const double dd = static_cast<double>(d);
  double value = special::lgamma(0.5 * (nu + dd)) + (dd - 1.0) * special::lgamma(0.5 * nu) -
                 dd * special::lgamma(0.5 * (nu + 1.0)) - 0.5 * corr.logdet() -
                 0.5 * (nu + dd) * std::log1p(quad / nu);
  for (Eigen::Index j = 0; j < d; ++j) value += 0.5 * (nu + 1.0) * std::log1p(z(j) * z(j) / nu);
  if (grad) {
    grad->resize(d);
    const double joint = (nu + dd) / (nu + quad);
    for (Eigen::Index j = 0; j < d; ++j)
      (*grad)(j) = -joint * pz(j) + (nu + 1.0) * z(j) / (nu + z(j) * z(j));
  }
  return value;
}

double gaussian_copula_logdensity(const Vec& v, const CorrelationModel& corr) {
  check_unit_interval(v);
  Vec z(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) z(j) = special::normal_quantile(v(j));
  return copula_logdensity_scores(z, corr, Copula::gaussian());
}

double t_copula_logdensity(const Vec& v, const CorrelationModel& corr, double nu) {
  check_unit_interval(v);
  const Copula copula = Copula::student_t(nu);
  Vec z(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) z(j) = special::student_t_quantile(v(j), nu);
  return copula_logdensity_scores(z, corr, copula);
}

double copula_logdensity(const Vec& v, const CorrelationModel& corr, const Copula& copula) {
  return copula.family == CopulaFamily::Gaussian ? gaussian_copula_logdensity(v, corr)
                                                 : t_copula_logdensity(v, corr, copula.nu);
}

LatentScore latent_score(double log_x, const InvGammaFactor& f3, const Copula& copula) {
  const double a = f3.shape();
  const double s = f3.scale();
  const double arg = s * std::exp(-log_x);
  LatentScore out;
  out.log_marginal = f3.log_norm() - a * log_x - arg;
  out.dlog_marginal = -a + arg;

  const double lower = special::gamma_q(a, arg);  // F3(x)
  const bool gaussian = copula.family == CopulaFamily::Gaussian;
  if (lower <= 0.5) {
    if (!(lower > 0.0)) {
      out.interior = false;
      return out;
    }
    out.z = gaussian ? special::normal_quantile(lower) : special::student_t_quantile(lower, copula.nu);
  } else {
    const double upper = special::gamma_p(a, arg);
    if (!(upper > 0.0)) {
      out.interior = false;
      return out;
    }
    out.z = gaussian ? special::normal_quantile_upper(upper)
                     : special::student_t_quantile_upper(upper, copula.nu);
  }
  const double log_score_density =
      gaussian ? special::normal_log_pdf(out.z) : special::student_t_log_pdf(out.z, copula.nu);
  out.dz_dlog = std::exp(out.log_marginal - log_score_density);
  if (!std::isfinite(out.z) || !std::isfinite(out.dz_dlog)) out.interior = false;
  return out;
}

double x3_joint_logdensity(const Vec& x3, double beta3, const CorrelationModel& corr,
                           const Copula& copula) {
  const InvGammaFactor f3(beta3);
  if (x3.size() != corr.dim()) throw ContractError("x3 dimension does not match the correlation model");
  Vec z(x3.size());
  double marginal = 0.0;
  for (Eigen::Index j = 0; j < x3.size(); ++j) {
    if (!(x3(j) > 0.0) || !std::isfinite(x3(j))) throw DomainError("x3 entries must be positive and finite");
    const double lx = std::log(x3(j));
    const LatentScore sc = latent_score(lx, f3, copula);
    if (!sc.interior) throw DomainError("F3(x3) rounds to 0 or 1; copula density undefined");
    z(j) = sc.z;
    marginal += sc.log_marginal - lx;
  }
  return copula_logdensity_scores(z, corr, copula) + marginal;
}

Mat copula_sample_scores(const CorrelationModel& corr, const Copula& copula, Eigen::Index n, Rng& rng) {
  const Eigen::Index d = corr.dim();
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat g(n, d);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index j = 0; j < d; ++j) g(t, j) = normal(rng);
  Mat z = g * corr.chol().transpose();
  if (copula.family == CopulaFamily::StudentT) {
    std::chi_squared_distribution<double> chi2(copula.nu);
    for (Eigen::Index t = 0; t < n; ++t) z.row(t) /= std::sqrt(chi2(rng) / copula.nu);
  }
  return z;
}

double score_to_uniform(double z, const Copula& copula) {
  return copula.family == CopulaFamily::Gaussian ? special::normal_cdf(z)
                                                 : special::student_t_cdf(z, copula.nu);
}

double score_to_upper(double z, const Copula& copula) { return score_to_uniform(-z, copula); }

Mat copula_sample(const CorrelationModel& corr, const Copula& copula, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Mat z = copula_sample_scores(corr, copula, n, rng);
  return z.unaryExpr([&](double s) { return score_to_uniform(s, copula); });
}

}  // namespace spmix
