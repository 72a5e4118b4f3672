#include "spmix/likelihood.hpp"

#include "spmix/special.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace spmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// W / expm1(W), the derivative of log(1 - exp(-W)) with respect to log W.
double censor_ratio(double w) {
  if (w < 1e-8) return 1.0 - 0.5 * w;
  if (w > 700.0) return 0.0;
  return w / std::expm1(w);
}

struct CellEval {
  double value = 0.0;
  double dlog_s = 0.0;
  double dbeta1 = 0.0;
};

// One observation cell of the censored likelihood given log s = log(alpha x2 x3).
// psi1 = digamma(1 + beta1) is only used when want_beta1 is set.
CellEval eval_cell(double y, double u, bool exceed, double log_s, const WeibullFactor& f1,
                   double psi1, bool want_beta1) {
  CellEval out;
  if (std::isinf(u)) return out;
  const double k = f1.shape();
  const double lg = f1.log_gamma_1p();
  if (exceed) {
    const double log_y = std::log(y);
    const double a = log_y - log_s + lg;
    const double w = std::exp(k * a);
    out.value = std::log(k) + k * a - w - log_y;
    out.dlog_s = k * (w - 1.0);
    if (want_beta1) {
      const double dka = -k * k * a + k * psi1;
      out.dbeta1 = -k + dka * (1.0 - w);
    }
  } else {
    const double a = std::log(u) - log_s + lg;
    const double w = std::exp(k * a);
    out.value = special::log1mexp(w);
    const double r = censor_ratio(w);
    out.dlog_s = -k * r;
    if (want_beta1) out.dbeta1 = r * (-k * k * a + k * psi1);
  }
  return out;
}

void check_cell(double y, double u, bool exceed, Eigen::Index t, Eigen::Index j) {
  if (exceed && !(y > 0.0)) {
    std::ostringstream os;
    os << "exceedance with non-positive observation at (" << t << ", " << j << ")";
    throw DataError(os.str());
  }
  if (!exceed && std::isfinite(u) && !(u > 0.0)) {
    std::ostringstream os;
    os << "censored cell with zero threshold at (" << t << ", " << j << ")";
    throw DataError(os.str());
  }
}

// Log-density of log x2 under F2 (includes the log-transform Jacobian).
double x2_logdens(const WeibullFactor& f2, double log_x2, double* grad) {
  const double k = f2.shape();
  const double kb = k * (log_x2 + f2.log_gamma_1p());
  const double w = std::exp(kb);
  if (grad) *grad = k * (1.0 - w);
  return std::log(k) + kb - w;
}

double x2_dbeta2(const WeibullFactor& f2, double psi2, double log_x2) {
  const double k = f2.shape();
  const double b = log_x2 + f2.log_gamma_1p();
  const double w = std::exp(k * b);
  const double dkb = -k * k * b + k * psi2;
  return -k + dkb * (1.0 - w);
}

LogTarget x3_logdens(const InvGammaFactor& f3, const CorrelationModel& corr, const Copula& copula,
                     const VecView& log_x3, Vec* grad) {
  const Eigen::Index d = log_x3.size();
  Vec z(d);
  Vec dz(d);
  Vec dmarg(d);
  double marginal = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const LatentScore sc = latent_score(log_x3(j), f3, copula);
    if (!sc.interior) return kReject;
    z(j) = sc.z;
    dz(j) = sc.dz_dlog;
    dmarg(j) = sc.dlog_marginal;
    marginal += sc.log_marginal;
  }
  Vec gz;
  const double cop = copula_logdensity_scores(z, corr, copula, grad ? &gz : nullptr);
  if (grad) *grad = dmarg.array() + gz.array() * dz.array();
  return cop + marginal;
}

LogTarget add(LogTarget acc, LogTarget term) {
  if (!acc || !term) return kReject;
  const double v = *acc + *term;
  if (!std::isfinite(v)) return kReject;
  return v;
}

LogTarget finite_or_reject(double v) {
  if (!std::isfinite(v)) return kReject;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

LogTarget PriorSpec::log_prior(const HyperParams& theta, const Bounds& bounds) const {
  if (!(theta.beta1 > 0.0 && theta.beta1 <= bounds.delta1)) return kReject;
  if (!(theta.beta2 > 0.0 && theta.beta2 <= bounds.delta2)) return kReject;
  if (!(theta.rho > 0.0 && theta.rho <= 2.0 * bounds.delta)) return kReject;
  if (!(theta.beta3 > 1.0) || !std::isfinite(theta.beta3)) return kReject;
  if (!theta.gamma.allFinite()) return kReject;
  double lp = 0.0;
  const double v = gamma_variance;
  for (Eigen::Index l = 0; l < theta.gamma.size(); ++l)
    lp += -0.5 * theta.gamma(l) * theta.gamma(l) / v - 0.5 * std::log(2.0 * M_PI * v);
  lp += -std::log(bounds.delta1) - std::log(bounds.delta2) - std::log(2.0 * bounds.delta);
  lp += beta3_shape * std::log(beta3_rate) - special::lgamma(beta3_shape) +
        (beta3_shape - 1.0) * std::log(theta.beta3) - beta3_rate * theta.beta3;
  return lp;
}

const char* block_name(Block b) {
  switch (b) {
    case Block::Gamma: return "gamma";
    case Block::Beta1: return "beta1";
    case Block::Beta2: return "beta2";
    case Block::ShapeRange: return "beta3_rho";
  }
  return "?";
}

Vec block_values(const TransformedHyperParams& tt, Block b) {
  switch (b) {
    case Block::Gamma: return tt.gamma;
    case Block::Beta1: return Vec::Constant(1, tt.beta1);
    case Block::Beta2: return Vec::Constant(1, tt.beta2);
    case Block::ShapeRange: {
      Vec v(2);
      v << tt.beta3, tt.rho;
      return v;
    }
  }
  return {};
}

void set_block_values(TransformedHyperParams& tt, Block b, const Vec& values) {
  switch (b) {
    case Block::Gamma:
      if (values.size() != tt.gamma.size()) throw ContractError("gamma block size mismatch");
      tt.gamma = values;
      return;
    case Block::Beta1: tt.beta1 = values(0); return;
    case Block::Beta2: tt.beta2 = values(0); return;
    case Block::ShapeRange:
      tt.beta3 = values(0);
      tt.rho = values(1);
      return;
  }
}

// ---------------------------------------------------------------------------

Posterior::Posterior(ExceedanceDataset data, StationSet stations, Copula copula, Bounds bounds,
                     PriorSpec priors)
    : data_(std::move(data)),
      stations_(std::move(stations)),
      copula_(copula),
      bounds_(bounds),
      priors_(priors) {
  stations_.validate();
  data_.validate();
  if (data_.num_sites() != stations_.size())
    throw ContractError("dataset has " + std::to_string(data_.num_sites()) + " sites but the station set has " +
                        std::to_string(stations_.size()));
  design_ = stations_.design();
  distances_ = stations_.distances();
  for (Eigen::Index t = 0; t < data_.num_times(); ++t)
    for (Eigen::Index j = 0; j < data_.num_sites(); ++j)
      check_cell(data_.y(t, j), data_.u(t, j), data_.e(t, j) == 1, t, j);
}

ParamCache Posterior::params(const TransformedHyperParams& tt) const {
  if (tt.gamma.size() != design_.cols()) throw ContractError("gamma size does not match the design");
  ParamCache p;
  p.tt = tt;
  p.theta = untransform(tt, bounds_, copula_);
  p.theta.validate();
  p.log_alpha = design_ * tt.gamma;
  p.f1 = WeibullFactor(p.theta.beta1);
  p.f2 = WeibullFactor(p.theta.beta2);
  p.f3 = InvGammaFactor(p.theta.beta3);
  p.corr = std::make_shared<const CorrelationModel>(CorrelationModel::build(distances_, p.theta.rho));
  return p;
}

ParamCache Posterior::params(const TransformedHyperParams& tt, const ParamCache& prev) const {
  if (tt.rho != prev.tt.rho || !prev.corr) return params(tt);
  ParamCache p;
  p.tt = tt;
  p.theta = untransform(tt, bounds_, copula_);
  p.theta.validate();
  p.log_alpha = tt.gamma == prev.tt.gamma ? prev.log_alpha : Vec(design_ * tt.gamma);
  p.f1 = tt.beta1 == prev.tt.beta1 ? prev.f1 : WeibullFactor(p.theta.beta1);
  p.f2 = tt.beta2 == prev.tt.beta2 ? prev.f2 : WeibullFactor(p.theta.beta2);
  p.f3 = tt.beta3 == prev.tt.beta3 ? prev.f3 : InvGammaFactor(p.theta.beta3);
  p.corr = prev.corr;
  return p;
}

double Posterior::obs_term(const ParamCache& p, double log_x2, const VecView& log_x3, Eigen::Index t,
                           Vec* glog_s) const {
  const Eigen::Index d = num_sites();
  if (glog_s) glog_s->resize(d);
  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const CellEval c = eval_cell(data_.y(t, j), data_.u(t, j), data_.e(t, j) == 1,
                                 p.log_alpha(j) + log_x2 + log_x3(j), p.f1, 0.0, false);
    total += c.value;
    if (glog_s) (*glog_s)(j) = c.dlog_s;
  }
  return total;
}

double Posterior::x2_term(const ParamCache& p, double log_x2, double* grad) const {
  return x2_logdens(p.f2, log_x2, grad);
}

LogTarget Posterior::x3_term(const ParamCache& p, const VecView& log_x3, Vec* grad) const {
  return x3_logdens(p.f3, *p.corr, copula_, log_x3, grad);
}

LogTarget Posterior::time_term(const ParamCache& p, const LatentState& latent, Eigen::Index t) const {
  const double l2 = latent.log_x2(t);
  const double obs = obs_term(p, l2, latent.log_x3.row(t).transpose(), t);
  return add(finite_or_reject(obs + x2_term(p, l2)), x3_term(p, latent.log_x3.row(t).transpose()));
}

LogTarget Posterior::log_prior_jacobian(const ParamCache& p) const {
  return add(priors_.log_prior(p.theta, bounds_), log_jacobian(p.tt, bounds_));
}

LogTarget Posterior::log_posterior(const ParamCache& p, const LatentState& latent) const {
  LogTarget acc = log_prior_jacobian(p);
  for (Eigen::Index t = 0; t < num_times() && acc; ++t) acc = add(acc, time_term(p, latent, t));
  return acc;
}

LogTarget Posterior::batch_log_target(const ParamCache& p, const LatentState& latent,
                                      std::span<const Eigen::Index> batch) const {
  LogTarget acc = 0.0;
  for (const auto t : batch) {
    acc = add(acc, time_term(p, latent, t));
    if (!acc) break;
  }
  return acc;
}

LogTarget Posterior::block_log_target(const ParamCache& p, const LatentState& latent, Block block) const {
  LogTarget acc = log_prior_jacobian(p);
  const Eigen::Index n = num_times();
  for (Eigen::Index t = 0; t < n && acc; ++t) {
    const double l2 = latent.log_x2(t);
    switch (block) {
      case Block::Gamma:
      case Block::Beta1:
        acc = add(acc, finite_or_reject(obs_term(p, l2, latent.log_x3.row(t).transpose(), t)));
        break;
      case Block::Beta2: acc = add(acc, finite_or_reject(x2_term(p, l2))); break;
      case Block::ShapeRange: acc = add(acc, x3_term(p, latent.log_x3.row(t).transpose())); break;
    }
  }
  return acc;
}

LatentGradient Posterior::grad_latent(const ParamCache& p, const LatentState& latent,
                                      std::span<const Eigen::Index> batch) const {
  const auto b = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index d = num_sites();
  LatentGradient g{Vec(b), Mat(b, d)};
  Vec glog_s, g3;
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::Index t = batch[static_cast<std::size_t>(k)];
    const double l2 = latent.log_x2(t);
    obs_term(p, l2, latent.log_x3.row(t).transpose(), t, &glog_s);
    double g2 = 0.0;
    x2_term(p, l2, &g2);
    g.log_x2(k) = g2 + glog_s.sum();
    if (x3_term(p, latent.log_x3.row(t).transpose(), &g3)) {
      g.log_x3.row(k) = (glog_s + g3).transpose();
    } else {
      g.log_x3.row(k).setConstant(kNaN);
    }
  }
  return g;
}

HyperGradient Posterior::grad_hyper(const ParamCache& p, const LatentState& latent, Block block,
                                    std::span<const Eigen::Index> batch) const {
  const Eigen::Index d = num_sites();
  HyperGradient g;
  switch (block) {
    case Block::Gamma: {
      Vec glog_s;
      Vec per_site = Vec::Zero(d);
      for (const auto t : batch) {
        obs_term(p, latent.log_x2(t), latent.log_x3.row(t).transpose(), t, &glog_s);
        per_site += glog_s;
      }
      g.data = design_.transpose() * per_site;
      g.prior = -p.tt.gamma / priors_.gamma_variance;
      return g;
    }
    case Block::Beta1: {
      const double psi1 = special::digamma(1.0 + p.theta.beta1);
      double sum = 0.0;
      for (const auto t : batch) {
        const double l2 = latent.log_x2(t);
        for (Eigen::Index j = 0; j < d; ++j) {
          sum += eval_cell(data_.y(t, j), data_.u(t, j), data_.e(t, j) == 1,
                           p.log_alpha(j) + l2 + latent.log_x3(t, j), p.f1, psi1, true)
                     .dbeta1;
        }
      }
      const double s = logistic(p.tt.beta1);
      g.data = Vec::Constant(1, sum * bounds_.delta1 * s * (1.0 - s));
      g.prior = Vec::Constant(1, 1.0 - 2.0 * s);
      return g;
    }
    case Block::Beta2: {
      const double psi2 = special::digamma(1.0 + p.theta.beta2);
      double sum = 0.0;
      for (const auto t : batch) sum += x2_dbeta2(p.f2, psi2, latent.log_x2(t));
      const double s = logistic(p.tt.beta2);
      g.data = Vec::Constant(1, sum * bounds_.delta2 * s * (1.0 - s));
      g.prior = Vec::Constant(1, 1.0 - 2.0 * s);
      return g;
    }
    case Block::ShapeRange:
      throw ContractError("no gradient for the beta3/rho block; it uses random-walk proposals");
  }
  return g;
}

std::vector<Eigen::Index> Posterior::all_times() const {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(num_times()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  return idx;
}

// ---------------------------------------------------------------------------

double loglik_time(const HyperParams& theta, const Vec& alpha, double log_x2t, const VecView& log_x3t,
                   const VecView& yt, const MaskView& et, const VecView& ut, const CorrelationModel& corr) {
  theta.validate();
  const Eigen::Index d = yt.size();
  if (alpha.size() != d || log_x3t.size() != d || et.size() != d || ut.size() != d || corr.dim() != d)
    throw ContractError("loglik_time dimension mismatch");
  const WeibullFactor f1(theta.beta1);
  const WeibullFactor f2(theta.beta2);
  const InvGammaFactor f3(theta.beta3);
  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    check_cell(yt(j), ut(j), et(j) == 1, 0, j);
    total += eval_cell(yt(j), ut(j), et(j) == 1, std::log(alpha(j)) + log_x2t + log_x3t(j), f1, 0.0, false)
                 .value;
  }
  total += x2_logdens(f2, log_x2t, nullptr) - log_x2t;
  const LogTarget x3 = x3_logdens(f3, corr, theta.copula, log_x3t, nullptr);
  if (!x3) return kNegInf;
  return total + *x3 - log_x3t.sum();
}

double loglik_total(const HyperParams& theta, const LatentState& latent, const ExceedanceDataset& data,
                    const StationSet& stations, const CorrelationModel& corr) {
  latent.validate();
  if (latent.log_x2.size() != data.num_times() || latent.log_x3.cols() != data.num_sites())
    throw ContractError("latent state does not match the dataset");
  const Vec alpha = scale_vector(theta, stations);
  double total = 0.0;
  for (Eigen::Index t = 0; t < data.num_times(); ++t) {
    total += loglik_time(theta, alpha, latent.log_x2(t), latent.log_x3.row(t).transpose(),
                         data.y.row(t).transpose(), data.e.row(t).transpose(), data.u.row(t).transpose(), corr);
  }
  return total;
}

LogTarget log_posterior(const TransformedHyperParams& tt, const LatentState& latent,
                        const ExceedanceDataset& data, const StationSet& stations, const PriorSpec& priors,
                        const Bounds& bounds, const Copula& copula) {
  const Posterior post(data, stations, copula, bounds, priors);
  ParamCache p;
  try {
    p = post.params(tt);
  } catch (const DomainError&) {
    return kReject;
  }
  return post.log_posterior(p, latent);
}

}  // namespace spmix
