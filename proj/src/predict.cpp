#include "spmix/predict.hpp"

#include "spmix/copula.hpp"
#include "spmix/diagnostics.hpp"
#include "spmix/model.hpp"
#include "spmix/special.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

namespace spmix {

namespace {

double score_to_x3(double z, const InvGammaFactor& f3, const Copula& copula) {
  return z > 0 ? f3.quantile_upper(score_to_upper(z, copula)) : f3.quantile(score_to_uniform(z, copula));
}

// Pairs each latent snapshot with the hyperparameter row of the same iteration.
std::vector<std::pair<std::size_t, std::size_t>> matched_snapshots(const ChainTrace& trace) {
  if (trace.latents.empty()) throw ContractError("trace holds no latent snapshots; rerun with latent_thin > 0");
  std::map<long, std::size_t> row_of;
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) row_of[trace.iterations[i]] = i;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < trace.latent_iterations.size(); ++s) {
    const auto it = row_of.find(trace.latent_iterations[s]);
    if (it == row_of.end())
      throw ContractError("no trace row for latent snapshot at iteration " +
                          std::to_string(trace.latent_iterations[s]));
    out.emplace_back(s, it->second);
  }
  return out;
}

HyperParams row_params(const std::vector<double>& row, const Copula& copula) {
  if (row.size() < 5) throw ContractError("trace row is too short");
  const Eigen::Index p = static_cast<Eigen::Index>(row.size()) - 4;
  HyperParams th;
  th.gamma = Eigen::Map<const Vec>(row.data(), p);
  th.beta1 = row[row.size() - 4];
  th.beta2 = row[row.size() - 3];
  th.beta3 = row[row.size() - 2];
  th.rho = row[row.size() - 1];
  th.copula = copula;
  return th;
}

// Threshold-weight integral of Phi((z - m) / s) over [a, b].
double weight_integral(double a, double b, double m, double s) {
  if (std::isinf(m) && m < 0) return b - a;
  if (s == 0.0) return std::max(0.0, b - std::max(a, m));
  auto psi = [](double x) { return x * special::normal_cdf(x) + std::exp(special::normal_log_pdf(x)); };
  return s * (psi((b - m) / s) - psi((a - m) / s));
}

}  // namespace

void PredictiveDraws::append(const PredictiveDraws& more) {
  if (draws.size() == 0 && cells.empty()) {
    *this = more;
    return;
  }
  if (more.cells != cells) throw ContractError("predictive draws cover different cells");
  Mat joined(draws.rows() + more.draws.rows(), draws.cols());
  joined << draws, more.draws;
  draws = std::move(joined);
  iterations.insert(iterations.end(), more.iterations.begin(), more.iterations.end());
}

std::vector<Cell> censored_cells(const ExceedanceDataset& data, const std::vector<Eigen::Index>& sites) {
  std::vector<Eigen::Index> js = sites;
  if (js.empty()) {
    js.resize(static_cast<std::size_t>(data.num_sites()));
    std::iota(js.begin(), js.end(), Eigen::Index{0});
  }
  std::vector<Cell> out;
  for (Eigen::Index j : js) {
    if (j < 0 || j >= data.num_sites())
      throw ContractError("site index " + std::to_string(j) + " is outside the station set");
    for (Eigen::Index t = 0; t < data.num_times(); ++t)
      if (std::isinf(data.u(t, j))) out.push_back({t, j});
  }
  return out;
}

HyperParams trace_params(const ChainTrace& trace, long iteration, const Copula& copula) {
  for (std::size_t i = 0; i < trace.iterations.size(); ++i)
    if (trace.iterations[i] == iteration) return row_params(trace.rows[i], copula);
  throw ContractError("no trace row at iteration " + std::to_string(iteration));
}

PredictiveDraws posterior_predict(const ChainTrace& trace, const Posterior& post, const std::vector<Cell>& cells,
                                  std::uint64_t seed) {
  const auto& data = post.data();
  for (const Cell& c : cells) {
    if (c.j < 0 || c.j >= post.num_sites())
      throw ContractError("masked site " + std::to_string(c.j) + " is outside the station set of " +
                          std::to_string(post.num_sites()) + " sites");
    if (c.t < 0 || c.t >= post.num_times())
      throw ContractError("masked time " + std::to_string(c.t) + " is outside the data");
    if (!std::isinf(data.u(c.t, c.j)))
      throw ContractError("cell (" + std::to_string(c.t) + ", " + std::to_string(c.j) +
                          ") is not fully censored");
  }
  const auto pairs = matched_snapshots(trace);
  PredictiveDraws out;
  out.cells = cells;
  out.draws.resize(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(cells.size()));
  Rng rng(seed);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto [s, i] = pairs[r];
    const HyperParams th = row_params(trace.rows[i], post.copula());
    const Vec log_alpha = post.design() * th.gamma;
    const WeibullFactor f1(th.beta1);
    const LatentState& lat = trace.latents[s];
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const Cell c = cells[k];
      out.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          std::exp(log_alpha(c.j) + lat.log_x2(c.t) + lat.log_x3(c.t, c.j)) * f1.sample(rng);
    }
    out.iterations.push_back(trace.latent_iterations[s]);
  }
  return out;
}

PredictiveDraws predict_new_sites(const ChainTrace& trace, const Posterior& post, const StationSet& sites,
                                  std::uint64_t seed) {
  sites.validate();
  if (sites.num_covariates() != post.stations().num_covariates())
    throw ContractError("new sites have " + std::to_string(sites.num_covariates()) + " covariates, fit has " +
                        std::to_string(post.stations().num_covariates()));
  const Eigen::Index n = post.num_times();
  const Eigen::Index d = post.num_sites();
  const Eigen::Index m = sites.size();
  const Mat& obs = post.stations().coords;
  Mat cross_dist(m, d);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < d; ++b) cross_dist(a, b) = (sites.coords.row(a) - obs.row(b)).norm();
  const Mat new_dist = sites.distances();
  const Mat design = sites.design();
  const Copula& copula = post.copula();

  const auto pairs = matched_snapshots(trace);
  PredictiveDraws out;
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index k = 0; k < m; ++k) out.cells.push_back({t, k});
  out.draws.resize(static_cast<Eigen::Index>(pairs.size()), n * m);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto [s, i] = pairs[r];
    const HyperParams th = row_params(trace.rows[i], copula);
    const Vec log_alpha = design * th.gamma;
    const WeibullFactor f1(th.beta1);
    const InvGammaFactor f3(th.beta3);
    const auto corr = CorrelationModel::build(post.stations(), th.rho);
    const Mat cross = (-cross_dist.array() / th.rho).exp().matrix();  // m x d
    // Conditional mean weights K = S_no S_oo^{-1}, covariance S_nn - K S_on.
    const Mat weights = corr.chol().transpose().triangularView<Eigen::Upper>().solve(
                            corr.chol().triangularView<Eigen::Lower>().solve(cross.transpose()))
                            .transpose();
    Mat cond = (-new_dist.array() / th.rho).exp().matrix() - weights * cross.transpose();
    cond = 0.5 * (cond + cond.transpose());
    Eigen::LDLT<Mat> ldlt(cond);
    Vec root_diag = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    const LatentState& lat = trace.latents[s];
    for (Eigen::Index t = 0; t < n; ++t) {
      Vec z_o(d);
      for (Eigen::Index j = 0; j < d; ++j) z_o(j) = latent_score(lat.log_x3(t, j), f3, copula).z;
      double scale = 1.0;
      if (copula.family == CopulaFamily::StudentT) {
        const Vec w = corr.chol().triangularView<Eigen::Lower>().solve(z_o);
        const double q = w.squaredNorm();
        std::gamma_distribution<double> mix(0.5 * (copula.nu + static_cast<double>(d)), 2.0 / (copula.nu + q));
        scale = 1.0 / std::sqrt(mix(rng));
      }
      Vec e(m);
      for (Eigen::Index k = 0; k < m; ++k) e(k) = normal(rng);
      // LDLT with pivoting: cond = P^T L D L^T P.
      Vec g = ldlt.matrixL() * (root_diag.asDiagonal() * e);
      g = ldlt.transpositionsP().transpose() * g;
      const Vec z_n = weights * z_o + scale * g;
      for (Eigen::Index k = 0; k < m; ++k) {
        const double x3 = score_to_x3(z_n(k), f3, copula);
        out.draws(static_cast<Eigen::Index>(r), t * m + k) =
            std::exp(log_alpha(k) + lat.log_x2(t)) * x3 * f1.sample(rng);
      }
    }
    out.iterations.push_back(trace.latent_iterations[s]);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ChiEstimate chi_presorted(std::span<const double> a, std::span<const double> b, const std::vector<double>& sa,
                          const std::vector<double>& sb, double u) {
  const double qa = sorted_quantile(sa, u);
  const double qb = sorted_quantile(sb, u);
  ChiEstimate est;
  est.u = u;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] > qb) {
      ++est.marginal;
      if (a[i] > qa) ++est.joint;
    }
  }
  if (est.joint == 0) {
    est.low_count = true;
    return est;
  }
  const double nb = static_cast<double>(est.marginal);
  est.chi = static_cast<double>(est.joint) / nb;
  est.mc_se = std::sqrt(est.chi * (1.0 - est.chi) / nb);
  return est;
}

void check_chi_inputs(std::size_t na, std::size_t nb, double u) {
  if (!(u > 0 && u < 1)) throw DomainError("chi level u must lie in (0, 1), got " + std::to_string(u));
  if (na != nb) throw ContractError("chi inputs have different lengths");
  if (static_cast<double>(na) < 1.0 / (1.0 - u))
    throw ContractError("chi at u = " + std::to_string(u) + " needs at least " +
                        std::to_string(static_cast<long>(std::ceil(1.0 / (1.0 - u)))) + " observations");
}

}  // namespace

ChiEstimate chi_u_empirical(std::span<const double> a, std::span<const double> b, double u) {
  check_chi_inputs(a.size(), b.size(), u);
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  return chi_presorted(a, b, sa, sb, u);
}

std::vector<ChiEstimate> chi_u_model(const HyperParams& theta, const StationSet& stations,
                                     std::pair<Eigen::Index, Eigen::Index> pair, const std::vector<double>& u_grid,
                                     Eigen::Index samples, std::uint64_t seed) {
  const auto [i, j] = pair;
  if (i < 0 || j < 0 || i >= stations.size() || j >= stations.size() || i == j)
    throw ContractError("chi pair must name two distinct stations");
  for (double u : u_grid) check_chi_inputs(static_cast<std::size_t>(samples), static_cast<std::size_t>(samples), u);
  const StationSet two = stations.subset({i, j});
  constexpr Eigen::Index kChunk = 1000000;
  std::vector<double> a, b;
  a.reserve(static_cast<std::size_t>(samples));
  b.reserve(static_cast<std::size_t>(samples));
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::vector<std::uint64_t> chunk_seeds(static_cast<std::size_t>((samples + kChunk - 1) / kChunk));
  std::vector<std::uint32_t> words(2 * chunk_seeds.size());
  seq.generate(words.begin(), words.end());
  for (std::size_t c = 0; c < chunk_seeds.size(); ++c)
    chunk_seeds[c] = (static_cast<std::uint64_t>(words[2 * c]) << 32) | words[2 * c + 1];
  for (std::size_t c = 0; c < chunk_seeds.size(); ++c) {
    const Eigen::Index rows = std::min(kChunk, samples - static_cast<Eigen::Index>(c) * kChunk);
    const Mat y = simulate_field(theta, two, rows, chunk_seeds[c]);
    for (Eigen::Index t = 0; t < rows; ++t) {
      a.push_back(y(t, 0));
      b.push_back(y(t, 1));
    }
  }
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<ChiEstimate> out;
  for (double u : u_grid) out.push_back(chi_presorted(a, b, sa, sb, u));
  return out;
}

// ---------------------------------------------------------------------------

double crps_sample(std::span<const double> draws, double y) {
  if (draws.size() < 2) throw ContractError("CRPS needs at least 2 forecast draws");
  std::vector<double> x(draws.begin(), draws.end());
  std::sort(x.begin(), x.end());
  const double m = static_cast<double>(x.size());
  double abs_y = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    abs_y += std::abs(x[i] - y);
    spread += (2.0 * static_cast<double>(i + 1) - m - 1.0) * x[i];
  }
  return abs_y / m - spread / (m * m);
}

double twcrps(std::span<const double> draws, double y, double weight_mean, double weight_sd) {
  if (draws.empty()) throw ContractError("twCRPS needs forecast draws");
  if (!(weight_sd >= 0)) throw DomainError("twCRPS weight sd must be >= 0");
  std::vector<double> x(draws.begin(), draws.end());
  std::sort(x.begin(), x.end());
  const double m = static_cast<double>(x.size());
  // Integrate w(z) (F(z) - 1{y <= z})^2 exactly between consecutive breakpoints.
  double total = 0.0;
  double prev = std::min(x.front(), y);
  std::size_t below = 0;
  bool past_y = false;
  auto advance = [&](double z) {
    const double f = static_cast<double>(below) / m - (past_y ? 1.0 : 0.0);
    if (z > prev && f != 0.0) total += f * f * weight_integral(prev, z, weight_mean, weight_sd);
    prev = std::max(prev, z);
  };
  std::size_t i = 0;
  while (i < x.size() || !past_y) {
    if (!past_y && (i == x.size() || y <= x[i])) {
      advance(y);
      past_y = true;
    } else {
      advance(x[i]);
      ++below;
      ++i;
    }
  }
  return total;
}

PointPredictor parse_point_predictor(const std::string& name) {
  if (name == "mean") return PointPredictor::Mean;
  if (name == "median") return PointPredictor::Median;
  throw ContractError("unknown point predictor '" + name + "' (expected mean or median)");
}

double point_prediction(std::span<const double> draws, PointPredictor predictor) {
  if (draws.empty()) throw ContractError("point prediction needs draws");
  if (predictor == PointPredictor::Median) return empirical_quantile({draws.begin(), draws.end()}, 0.5);
  // shifted by the first draw so identical draws return that value exactly
  const double x0 = draws.front();
  double sum = 0.0;
  for (double x : draws) sum += x - x0;
  return x0 + sum / static_cast<double>(draws.size());
}

double mpe(const PredictiveDraws& predictive, const Vec& truth, PointPredictor predictor) {
  if (truth.size() != predictive.num_cells())
    throw ContractError("truth has " + std::to_string(truth.size()) + " entries for " +
                        std::to_string(predictive.num_cells()) + " cells");
  if (predictive.num_cells() == 0) throw ContractError("MPE needs at least one cell");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < predictive.num_cells(); ++k) {
    const Vec col = predictive.draws.col(k);
    const double e = point_prediction({col.data(), static_cast<std::size_t>(col.size())}, predictor) - truth(k);
    sum += e * e;
  }
  return sum / static_cast<double>(predictive.num_cells());
}

std::vector<CellScore> score_cells(const PredictiveDraws& predictive, const Vec& truth, const Vec& weight_mean,
                                   double weight_sd, PointPredictor predictor) {
  if (truth.size() != predictive.num_cells() || weight_mean.size() != predictive.num_cells())
    throw ContractError("truth and weight means need one entry per predicted cell");
  std::vector<CellScore> out;
  for (Eigen::Index k = 0; k < predictive.num_cells(); ++k) {
    const Vec col = predictive.draws.col(k);
    const std::span<const double> d(col.data(), static_cast<std::size_t>(col.size()));
    out.push_back({predictive.cells[static_cast<std::size_t>(k)], point_prediction(d, predictor), truth(k),
                   crps_sample(d, truth(k)), twcrps(d, truth(k), weight_mean(k), weight_sd)});
  }
  return out;
}

}  // namespace spmix
