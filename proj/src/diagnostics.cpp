#include "spmix/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spmix {

namespace {

std::vector<double> column_after(const ChainTrace& trace, Eigen::Index k, double fraction) {
  const Mat m = trace.draws_after(fraction);
  return std::vector<double>(m.col(k).data(), m.col(k).data() + m.rows());
}

}  // namespace

EssResult ess(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 10) throw ContractError("ESS needs at least 10 draws, got " + std::to_string(n));
  const double mean = std::accumulate(chain.begin(), chain.end(), 0.0) / static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (chain[i] - mean) * (chain[i + lag] - mean);
    return s / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0) || c0 < 1e-300) return {0.0, true};

  double tau = -1.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return {static_cast<double>(n) / tau, false};
}

std::vector<double> ess_per_minute(const ChainTrace& trace, double discard_fraction) {
  const double minutes = trace.seconds / 60.0;
  std::vector<double> out;
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(trace.names.size()); ++k) {
    const auto col = column_after(trace, k, discard_fraction);
    const double e = col.size() >= 10 ? ess(col).value : 0.0;
    out.push_back(minutes > 0 ? e / minutes : std::numeric_limits<double>::infinity());
  }
  return out;
}

double rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw ContractError("R-hat needs at least two chains");
  std::size_t len = chains.front().size();
  for (const auto& c : chains) len = std::min(len, c.size());
  if (len < 2) throw ContractError("R-hat needs at least two draws per chain");
  const double m = static_cast<double>(chains.size());
  const double l = static_cast<double>(len);
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const double mu = std::accumulate(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(len), 0.0) / l;
    double ss = 0.0;
    for (std::size_t i = 0; i < len; ++i) ss += (c[i] - mu) * (c[i] - mu);
    means.push_back(mu);
    vars.push_back(ss / (l - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= l / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (l - 1.0) / l * w + b / l;
  return std::sqrt(var_plus / w);
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<ParameterSummary> summarize(const std::vector<ChainTrace>& chains, double discard_fraction) {
  if (chains.empty()) throw ContractError("no chains to summarize");
  const auto& names = chains.front().names;
  double minutes = 0.0;
  for (const auto& c : chains) {
    if (c.names != names) throw ContractError("chains have different parameter sets");
    minutes += c.seconds / 60.0;
  }
  std::vector<ParameterSummary> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<std::vector<double>> per_chain;
    std::vector<double> pooled;
    double ess_total = 0.0;
    bool constant = true;
    for (const auto& c : chains) {
      per_chain.push_back(column_after(c, static_cast<Eigen::Index>(k), discard_fraction));
      const auto& col = per_chain.back();
      pooled.insert(pooled.end(), col.begin(), col.end());
      if (col.size() >= 10) {
        const EssResult e = ess(col);
        ess_total += e.value;
        constant = constant && e.constant;
      }
    }
    if (pooled.empty()) throw ContractError("no draws left after discarding burn-in");
    const double n = static_cast<double>(pooled.size());
    const double mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : pooled) ss += (v - mean) * (v - mean);
    ParameterSummary s;
    s.name = names[k];
    s.mean = mean;
    s.sd = pooled.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.lower = empirical_quantile(pooled, 0.025);
    s.upper = empirical_quantile(pooled, 0.975);
    s.ess = ess_total;
    s.ess_per_minute = minutes > 0 ? ess_total / minutes : std::numeric_limits<double>::infinity();
    s.rhat = chains.size() >= 2 ? rhat(per_chain) : std::numeric_limits<double>::quiet_NaN();
    s.constant = constant;
    out.push_back(s);
  }
  return out;
}

}  // namespace spmix
