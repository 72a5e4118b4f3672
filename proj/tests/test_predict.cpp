#include "spmix/copula.hpp"
#include "spmix/diagnostics.hpp"
#include "spmix/predict.hpp"

#include "doctest.h"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace spmix;
using namespace spmix::testing;

namespace {

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double Phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double gaussian_crps(double mu, double sigma, double y) {
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * Phi(z) - 1.0) + 2.0 * phi(z) - 1.0 / std::sqrt(std::numbers::pi));
}

std::vector<double> normals(long m, double mu, double sigma, Rng& rng) {
  std::normal_distribution<double> n(mu, sigma);
  std::vector<double> v(static_cast<std::size_t>(m));
  for (auto& x : v) x = n(rng);
  return v;
}

// Brute-force twCRPS on a fine midpoint grid.
double twcrps_grid(std::vector<double> x, double y, double mean, double sd) {
  std::sort(x.begin(), x.end());
  const double lo = std::min(x.front(), y) - 1.0, hi = std::max(x.back(), y) + 1.0;
  const long nodes = 400000;
  const double h = (hi - lo) / nodes;
  double total = 0.0;
  for (long i = 0; i < nodes; ++i) {
    const double z = lo + (i + 0.5) * h;
    const double f = static_cast<double>(std::upper_bound(x.begin(), x.end(), z) - x.begin()) / x.size();
    const double ind = y <= z ? 1.0 : 0.0;
    total += Phi((z - mean) / sd) * (f - ind) * (f - ind) * h;
  }
  return total;
}

struct PredictSetup {
  StationSet stations;
  ExceedanceDataset data;
  Bounds bounds;
};

PredictSetup one_site(Eigen::Index n) {
  PredictSetup s;
  s.stations.coords = Mat::Zero(1, 2);
  s.stations.Z = Mat::Zero(1, 0);
  s.stations.ids = {"a"};
  s.data = ExceedanceDataset::from_thresholds(Mat::Ones(n, 1), Mat::Constant(n, 1, kInf));
  s.bounds = {1.0, 1.0, 2.0};
  return s;
}

ChainTrace constant_trace(const HyperParams& th, const LatentState& lat, long snapshots) {
  ChainTrace tr;
  tr.names = th.names();
  const Vec v = th.flatten();
  for (long k = 1; k <= snapshots; ++k) {
    tr.iterations.push_back(k);
    tr.rows.emplace_back(v.data(), v.data() + v.size());
    tr.latent_iterations.push_back(k);
    tr.latents.push_back(lat);
  }
  return tr;
}

}  // namespace

TEST_CASE("crps_sample") {
  Rng rng(3);
  SUBCASE("point forecast") {
    const std::vector<double> c(50, 2.5);
    CHECK(crps_sample(c, 1.0) == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(crps_sample(c, 4.0) == doctest::Approx(1.5).epsilon(1e-14));
  }
  SUBCASE("standard normal at zero") {
    const auto x = normals(100000, 0.0, 1.0, rng);
    CHECK(std::abs(crps_sample(x, 0.0) - 0.2337) < 0.005);
    CHECK(std::abs(crps_sample(x, 0.0) - gaussian_crps(0, 1, 0)) < 0.005);
  }
  SUBCASE("closed form on random inputs") {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
      const double mu = 4.0 * u(rng) - 2.0, sigma = 0.5 + 1.5 * u(rng), y = mu + 3.0 * (u(rng) - 0.5) * sigma;
      const auto x = normals(100000, mu, sigma, rng);
      CHECK(std::abs(crps_sample(x, y) - gaussian_crps(mu, sigma, y)) < 0.005);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(crps_sample(std::vector<double>{1.0}, 0.0), ContractError);
    CHECK_THROWS_AS(twcrps(std::vector<double>{}, 0.0, 0.0), ContractError);
  }
}

TEST_CASE("twcrps") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SUBCASE("flat weight reduces to CRPS") {
    for (int i = 0; i < 10; ++i) {
      const auto x = normals(2000, 0.0, 1.0 + u(rng), rng);
      const double y = 2.0 * u(rng) - 1.0;
      CHECK(std::abs(twcrps(x, y, -kInf, 0.0) - crps_sample(x, y)) < 1e-6);
      CHECK(std::abs(twcrps(x, y, -1e6, 10.0) - crps_sample(x, y)) < 1e-6);
    }
  }
  SUBCASE("bounded by CRPS") {
    for (int i = 0; i < 50; ++i) {
      const auto x = normals(500, 10.0 * u(rng), 5.0 * u(rng) + 0.1, rng);
      const double y = 20.0 * u(rng) - 5.0;
      CHECK(twcrps(x, y, 20.0 * u(rng) - 5.0, 10.0 * u(rng)) <= crps_sample(x, y) + 1e-12);
    }
  }
  SUBCASE("matches a grid integral") {
    for (int i = 0; i < 5; ++i) {
      const auto x = normals(200, 3.0, 2.0, rng);
      const double y = 6.0 * u(rng), mean = 6.0 * u(rng);
      CHECK(twcrps(x, y, mean, 1.5) == doctest::Approx(twcrps_grid(x, y, mean, 1.5)).epsilon(1e-4));
    }
  }
}

TEST_CASE("mpe") {
  PredictiveDraws p;
  p.cells = {{0, 0}, {1, 0}, {2, 1}};
  p.draws.resize(4, 3);
  p.draws << 1, 2, 3, 3, 2, 5, 1, 2, 3, 3, 10, 5;
  const Vec means = p.draws.colwise().mean();
  CHECK(mpe(p, means) == 0.0);
  Vec truth(3);
  truth << 0, 4, 4;
  CHECK(mpe(p, truth) == doctest::Approx((4.0 + 0.0 + 0.0) / 3.0));
  CHECK(mpe(p, truth, PointPredictor::Median) == doctest::Approx((4.0 + 4.0 + 0.0) / 3.0));
  CHECK_THROWS_AS(mpe(p, Vec::Zero(2)), ContractError);
  CHECK(parse_point_predictor("median") == PointPredictor::Median);
  CHECK_THROWS_AS(parse_point_predictor("mode"), ContractError);
  const auto scores = score_cells(p, means, Vec::Constant(3, -kInf), 0.0);
  REQUIRE(scores.size() == 3);
  for (const auto& s : scores) CHECK(s.twcrps == doctest::Approx(s.crps).epsilon(1e-12));
}

TEST_CASE("chi_u_empirical") {
  Rng rng(12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const long m = 1000000;
  std::vector<double> a(m), b(m);
  for (long i = 0; i < m; ++i) a[i] = unif(rng), b[i] = unif(rng);
  SUBCASE("comonotone") {
    for (double u : {0.5, 0.9, 0.99, 0.999}) CHECK(chi_u_empirical(a, a, u).chi == 1.0);
  }
  SUBCASE("independence") {
    const auto est = chi_u_empirical(a, b, 0.9);
    CHECK(std::abs(est.chi - 0.1) < 0.01);
    CHECK(est.mc_se > 0);
    CHECK_FALSE(est.low_count);
  }
  SUBCASE("rank invariance and range") {
    std::vector<double> ta(m), tb(m);
    for (long i = 0; i < m; ++i) ta[i] = std::exp(5.0 * a[i]), tb[i] = std::pow(b[i], 3) - 7.0;
    for (double u : {0.8, 0.95, 0.999}) {
      const auto x = chi_u_empirical(a, b, u), y = chi_u_empirical(ta, tb, u);
      CHECK(x.chi == y.chi);
      CHECK(x.chi >= 0.0);
      CHECK(x.chi <= 1.0);
    }
  }
  SUBCASE("no joint exceedances") {
    std::vector<double> c(m);
    for (long i = 0; i < m; ++i) c[i] = -a[i];
    const auto est = chi_u_empirical(a, c, 0.9);
    CHECK(est.chi == 0.0);
    CHECK(est.low_count);
  }
  SUBCASE("errors") {
    const std::vector<double> s(50, 1.0);
    CHECK_THROWS_AS(chi_u_empirical(s, s, 0.99), ContractError);
    CHECK_THROWS_AS(chi_u_empirical(s, std::vector<double>(49, 1.0), 0.5), ContractError);
    CHECK_THROWS_AS(chi_u_empirical(s, s, 1.0), DomainError);
  }
}

TEST_CASE("chi_u_model") {
  StationSet st;
  st.coords.resize(3, 2);
  st.coords << 0, 0, 0.5, 0, 0, 0;
  st.Z = Mat::Zero(3, 0);
  st.ids = {"a", "b", "c"};
  HyperParams th;
  th.gamma = Vec::Zero(1);
  th.beta3 = 5.0;
  th.rho = 1.0;
  const std::vector<double> grid{0.9, 0.95, 0.99};
  SUBCASE("distance ordering") {
    th.beta1 = 0.25;
    th.beta2 = 0.75;
    const auto near = chi_u_model(th, st, {0, 2}, grid, 200000, 1);
    const auto far = chi_u_model(th, st, {0, 1}, grid, 200000, 1);
    for (std::size_t k = 0; k < grid.size(); ++k) CHECK(near[k].chi > far[k].chi);
  }
  SUBCASE("higher beta2 dominates") {
    th.beta1 = 0.25;
    th.beta2 = 0.75;
    const auto hi = chi_u_model(th, st, {0, 1}, grid, 400000, 2);
    th.beta1 = 0.75;
    th.beta2 = 0.25;
    const auto lo = chi_u_model(th, st, {0, 1}, grid, 400000, 2);
    for (std::size_t k = 0; k < grid.size(); ++k) CHECK(hi[k].chi > lo[k].chi);
  }
  SUBCASE("reproducible and validated") {
    th.beta1 = th.beta2 = 0.5;
    const auto a = chi_u_model(th, st, {0, 1}, {0.9}, 20000, 7);
    const auto b = chi_u_model(th, st, {0, 1}, {0.9}, 20000, 7);
    CHECK(a[0].chi == b[0].chi);
    CHECK_THROWS_AS(chi_u_model(th, st, {0, 0}, {0.9}, 1000, 1), ContractError);
    CHECK_THROWS_AS(chi_u_model(th, st, {0, 1}, {0.9999}, 1000, 1), ContractError);
  }
}

TEST_CASE("posterior_predict") {
  Rng rng(21);
  Instance inst = random_instance(31, 4, 6);
  Mat u = inst.data.u;
  u.col(2).setConstant(kInf);
  const ExceedanceDataset data = ExceedanceDataset::from_thresholds(inst.data.y, u);
  const Posterior post(data, inst.stations, Copula::gaussian(), inst.bounds);
  const auto cells = censored_cells(data, {2});
  REQUIRE(cells.size() == 6);

  SUBCASE("degenerate x1 gives the latent product exactly") {
    HyperParams th = inst.theta;
    th.beta1 = 1e-12;
    const ChainTrace tr = constant_trace(th, inst.latent, 3);
    const PredictiveDraws p = posterior_predict(tr, post, cells, 5);
    REQUIRE(p.num_draws() == 3);
    const Vec alpha = scale_vector(th, inst.stations);
    for (Eigen::Index k = 0; k < p.num_cells(); ++k) {
      const Cell c = p.cells[static_cast<std::size_t>(k)];
      const double expect = alpha(c.j) * std::exp(inst.latent.log_x2(c.t) + inst.latent.log_x3(c.t, c.j));
      for (Eigen::Index r = 0; r < 3; ++r) CHECK(p.draws(r, k) == doctest::Approx(expect).epsilon(1e-9));
    }
  }
  SUBCASE("x1 has unit mean") {
    const ChainTrace tr = constant_trace(inst.theta, inst.latent, 20000);
    const PredictiveDraws p = posterior_predict(tr, post, {cells[0]}, 6);
    const Vec alpha = scale_vector(inst.theta, inst.stations);
    const double base = alpha(2) * std::exp(inst.latent.log_x2(0) + inst.latent.log_x3(0, 2));
    std::vector<double> v(p.draws.data(), p.draws.data() + p.draws.size());
    for (auto& x : v) x /= base;
    const auto ms = mean_se(v);
    CHECK(std::abs(ms.mean - 1.0) < 3 * ms.se);
    CHECK((p.draws.array() > 0).all());
  }
  SUBCASE("errors") {
    const ChainTrace tr = constant_trace(inst.theta, inst.latent, 2);
    CHECK_THROWS_AS(posterior_predict(tr, post, {{0, 4}}, 1), ContractError);
    CHECK_THROWS_AS(censored_cells(data, {9}), ContractError);
    bool finite_found = false;
    for (Eigen::Index t = 0; t < 6 && !finite_found; ++t)
      if (!std::isinf(data.u(t, 0))) {
        finite_found = true;
        CHECK_THROWS_AS(posterior_predict(tr, post, {{t, 0}}, 1), ContractError);
      }
    CHECK(finite_found);
    ChainTrace empty = tr;
    empty.latents.clear();
    empty.latent_iterations.clear();
    CHECK_THROWS_AS(posterior_predict(empty, post, cells, 1), ContractError);
  }
  SUBCASE("seeded") {
    const ChainTrace tr = constant_trace(inst.theta, inst.latent, 10);
    CHECK(posterior_predict(tr, post, cells, 4).draws == posterior_predict(tr, post, cells, 4).draws);
  }
}

TEST_CASE("predict_new_sites") {
  SUBCASE("conditional score distribution, Gaussian and t") {
    for (const Copula copula : {Copula::gaussian(), Copula::student_t(4.0)}) {
      const PredictSetup s = one_site(1);
      const Posterior post(s.data, s.stations, copula, s.bounds);
      HyperParams th;
      th.gamma = Vec::Zero(1);
      th.beta1 = 1e-12;
      th.beta2 = 0.5;
      th.beta3 = 4.0;
      th.rho = 1.0;
      th.copula = copula;
      LatentState lat{Vec::Zero(1), Mat::Constant(1, 1, std::log(1.6))};
      const ChainTrace tr = constant_trace(th, lat, 100000);
      StationSet fresh;
      fresh.coords = Mat::Zero(1, 2);
      fresh.coords(0, 0) = 0.4;
      fresh.Z = Mat::Zero(1, 0);
      fresh.ids = {"new"};
      const PredictiveDraws p = predict_new_sites(tr, post, fresh, 9);
      const InvGammaFactor f3(4.0);
      const double z_o = latent_score(std::log(1.6), f3, copula).z;
      std::vector<double> z(static_cast<std::size_t>(p.num_draws()));
      for (Eigen::Index r = 0; r < p.num_draws(); ++r) z[r] = latent_score(std::log(p.draws(r, 0)), f3, copula).z;
      const auto ms = mean_se(z);
      double ss = 0.0;
      for (double v : z) ss += (v - ms.mean) * (v - ms.mean);
      const double var = ss / (z.size() - 1);
      const double r = std::exp(-0.4);
      double expect_var = 1.0 - r * r;
      if (copula.family == CopulaFamily::StudentT) {
        // Bivariate t conditional: t_{nu+1} with squared scale (nu + z^2)/(nu + 1) (1 - r^2).
        const double nu = copula.nu;
        expect_var *= (nu + z_o * z_o) / (nu + 1.0) * (nu + 1.0) / (nu - 1.0);
      }
      CHECK(std::abs(ms.mean - r * z_o) < 4 * ms.se);
      CHECK(var == doctest::Approx(expect_var).epsilon(copula.family == CopulaFamily::StudentT ? 0.05 : 0.02));
    }
  }
  SUBCASE("co-located site follows the observed site") {
    Rng rng(5);
    StationSet st = random_stations(5, 1, rng);
    const Eigen::Index n = 4;
    ExceedanceDataset data = ExceedanceDataset::from_thresholds(Mat::Ones(n, 5), Mat::Constant(n, 5, kInf));
    const Bounds bounds{1.0, 1.0, 5.0};
    const Posterior post(data, st, Copula::gaussian(), bounds);
    HyperParams th;
    th.gamma = (Vec(2) << 0.3, 0.5).finished();
    th.beta1 = 0.6;
    th.beta2 = 0.5;
    th.beta3 = 5.0;
    th.rho = 8.0;
    const SimulatedField sim = simulate_components(th, st, n, 17);
    LatentState lat{sim.x2.array().log().matrix(), sim.x3.array().log().matrix()};
    const ChainTrace tr = constant_trace(th, lat, 4000);
    const StationSet twin = st.subset({3});
    const PredictiveDraws p = predict_new_sites(tr, post, twin, 3);
    const Vec alpha = scale_vector(th, st);
    const WeibullFactor f1(th.beta1);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vec col = p.draws.col(t);
      const double median = empirical_quantile({col.data(), col.data() + col.size()}, 0.5);
      const double oracle = alpha(3) * sim.x2(t) * sim.x3(t, 3) * f1.quantile(0.5);
      CHECK(std::abs(median / oracle - 1.0) < 0.1);
    }
  }
  SUBCASE("covariate mismatch") {
    const PredictSetup s = one_site(1);
    const Posterior post(s.data, s.stations, Copula::gaussian(), s.bounds);
    Rng rng(1);
    const StationSet other = random_stations(2, 1, rng);
    HyperParams th;
    th.gamma = Vec::Zero(1);
    const ChainTrace tr = constant_trace(th, LatentState::ones(1, 1), 1);
    CHECK_THROWS_AS(predict_new_sites(tr, post, other, 1), ContractError);
  }
}
