#include "spmix/types.hpp"

#include <cmath>
#include <sstream>

namespace spmix {

Copula Copula::student_t(double nu) {
  if (!(nu > 0.0) || !std::isfinite(nu)) throw DomainError("student-t copula needs nu > 0");
  return {CopulaFamily::StudentT, nu};
}

std::string Copula::name() const {
  if (family == CopulaFamily::Gaussian) return "gaussian";
  std::ostringstream os;
  os << "student-t(" << nu << ")";
  return os.str();
}

void HyperParams::validate() const {
  if (gamma.size() < 1) throw DomainError("gamma needs at least the intercept");
  if (!gamma.allFinite()) throw DomainError("gamma must be finite");
  if (!(beta1 > 0.0) || !std::isfinite(beta1)) throw DomainError("beta1 must be > 0");
  if (!(beta2 > 0.0) || !std::isfinite(beta2)) throw DomainError("beta2 must be > 0");
  if (!(beta3 > 1.0) || !std::isfinite(beta3)) throw DomainError("beta3 must be > 1");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw DomainError("rho must be > 0");
  if (copula.family == CopulaFamily::StudentT && !(copula.nu > 0.0))
    throw DomainError("student-t copula needs nu > 0");
}

void HyperParams::validate(const Bounds& bounds) const {
  validate();
  if (beta1 > bounds.delta1) throw DomainError("beta1 exceeds delta1");
  if (beta2 > bounds.delta2) throw DomainError("beta2 exceeds delta2");
  if (rho > 2.0 * bounds.delta) throw DomainError("rho exceeds 2 * delta");
}

std::vector<std::string> HyperParams::names() const {
  std::vector<std::string> out;
  for (Eigen::Index l = 0; l < gamma.size(); ++l) out.push_back("gamma" + std::to_string(l));
  for (const char* s : {"beta1", "beta2", "beta3", "rho"}) out.emplace_back(s);
  return out;
}

Vec HyperParams::flatten() const {
  Vec v(gamma.size() + 4);
  v << gamma, beta1, beta2, beta3, rho;
  return v;
}

Vec TransformedHyperParams::flatten() const {
  Vec v(gamma.size() + 4);
  v << gamma, beta1, beta2, beta3, rho;
  return v;
}

TransformedHyperParams TransformedHyperParams::unflatten(const Vec& v) {
  if (v.size() < 5) throw ContractError("flattened parameter vector too short");
  const Eigen::Index p1 = v.size() - 4;
  TransformedHyperParams t;
  t.gamma = v.head(p1);
  t.beta1 = v(p1);
  t.beta2 = v(p1 + 1);
  t.beta3 = v(p1 + 2);
  t.rho = v(p1 + 3);
  return t;
}

Mat StationSet::design() const {
  Mat X(size(), Z.cols() + 1);
  X.col(0).setOnes();
  if (Z.cols() > 0) X.rightCols(Z.cols()) = Z;
  return X;
}

Mat StationSet::distances() const {
  const Eigen::Index d = size();
  Mat D(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    D(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < d; ++j) {
      D(i, j) = D(j, i) = (coords.row(i) - coords.row(j)).norm();
    }
  }
  return D;
}

double StationSet::max_distance() const { return size() > 1 ? distances().maxCoeff() : 0.0; }

void StationSet::validate() const {
  if (coords.rows() < 1) throw ContractError("station set is empty");
  if (coords.cols() != 2) throw ContractError("station coordinates must be d x 2");
  if (Z.rows() != coords.rows() && Z.size() != 0)
    throw ContractError("covariate rows must match the number of stations");
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != coords.rows())
    throw ContractError("station id count must match the number of stations");
  if (!coords.allFinite()) throw ContractError("station coordinates must be finite");
}

StationSet StationSet::subset(const std::vector<Eigen::Index>& rows) const {
  StationSet out;
  out.coords.resize(static_cast<Eigen::Index>(rows.size()), 2);
  out.Z.resize(static_cast<Eigen::Index>(rows.size()), Z.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = rows[k];
    if (r < 0 || r >= size()) throw ContractError("station index out of range");
    out.coords.row(static_cast<Eigen::Index>(k)) = coords.row(r);
    if (Z.cols() > 0) out.Z.row(static_cast<Eigen::Index>(k)) = Z.row(r);
    if (!ids.empty()) out.ids.push_back(ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

ExceedanceDataset ExceedanceDataset::from_thresholds(Mat y, Mat u) {
  if (y.rows() != u.rows() || y.cols() != u.cols())
    throw ContractError("y and u must have identical shapes");
  ExceedanceDataset data;
  data.e.resize(y.rows(), y.cols());
  for (Eigen::Index t = 0; t < y.rows(); ++t)
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      data.e(t, j) = (std::isfinite(u(t, j)) && y(t, j) > u(t, j)) ? 1 : 0;
  data.y = std::move(y);
  data.u = std::move(u);
  return data;
}

void ExceedanceDataset::validate() const {
  if (u.rows() != y.rows() || u.cols() != y.cols() || e.rows() != y.rows() || e.cols() != y.cols())
    throw ContractError("y, u and e must have identical shapes");
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double ut = u(t, j);
      if (std::isnan(ut) || ut < 0.0) {
        std::ostringstream os;
        os << "threshold at (" << t << ", " << j << ") must be >= 0 or +inf";
        throw DataError(os.str());
      }
      const bool exceed = std::isfinite(ut) && y(t, j) > ut;
      if (exceed != (e(t, j) == 1)) {
        std::ostringstream os;
        os << "exceedance indicator inconsistent at (" << t << ", " << j << ")";
        throw DataError(os.str());
      }
      if (std::isfinite(ut) && ut <= 0.0 && e(t, j) == 0) {
        std::ostringstream os;
        os << "zero threshold with a non-exceedance at (" << t << ", " << j << ")";
        throw DataError(os.str());
      }
    }
  }
}

ExceedanceDataset ExceedanceDataset::rows(Eigen::Index begin, Eigen::Index count) const {
  ExceedanceDataset out;
  out.y = y.middleRows(begin, count);
  out.u = u.middleRows(begin, count);
  out.e = e.middleRows(begin, count);
  return out;
}

void LatentState::validate() const {
  if (log_x3.rows() != log_x2.size()) throw ContractError("latent x2 and x3 disagree on n");
  if (!log_x2.allFinite() || !log_x3.allFinite()) throw DomainError("latent values must be finite");
}

}  // namespace spmix
