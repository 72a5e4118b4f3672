#include "doctest.h"

#include "spmix/model.hpp"
#include "spmix/special.hpp"
#include "test_support.hpp"

#include <cmath>
#include <vector>

using namespace spmix;
using namespace spmix::testing;

namespace {

StationSet unit_square(Eigen::Index d, std::uint64_t seed, Eigen::Index p = 0) {
  Rng rng(seed);
  return random_stations(d, p, rng);
}

std::vector<double> draws(const auto& dist, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = dist.sample(rng);
  return out;
}

}  // namespace

TEST_CASE("scale_vector") {
  StationSet st = unit_square(4, 1);
  HyperParams th;
  th.gamma = Vec::Constant(1, std::log(2.0));
  Vec a = scale_vector(th, st);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK(a(j) == doctest::Approx(2.0).epsilon(1e-15));

  st.Z = Mat::Constant(4, 1, 0.5);
  th.gamma = (Vec(2) << 0.0, 1.0).finished();
  a = scale_vector(th, st);
  CHECK(a(0) == doctest::Approx(1.6487212707).epsilon(1e-10));

  th.gamma = Vec::Zero(2);
  CHECK(scale_vector(th, st).isOnes());

  th.gamma = Vec::Zero(3);
  CHECK_THROWS_AS(scale_vector(th, st), ContractError);
}

TEST_CASE("Weibull factor") {
  const WeibullFactor exp1(1.0);
  CHECK(exp1.cdf(std::log(2.0)) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(exp1.pdf(1e-12) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(exp1.quantile(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(WeibullFactor(0.0), DomainError);
  CHECK_THROWS_AS(WeibullFactor(-1.0), DomainError);

  SUBCASE("unit mean at beta = 0.8") {
    const auto ms = mean_se(draws(WeibullFactor(0.8), 1000000, 42));
    CHECK(std::abs(ms.mean - 1.0) < 3.0 * ms.se);
  }
  SUBCASE("power-of-exponential sampling and Weibull CDF are the same law") {
    for (double beta : {0.3, 0.8, 1.7}) {
      const WeibullFactor f(beta);
      const auto x = draws(f, 100000, 7);
      const double dstat = ks_statistic(x, [&](double v) { return f.cdf(v); });
      CHECK(ks_pvalue(dstat, x.size()) > 0.01);
    }
  }
  SUBCASE("unit mean for beta in (0, 2]") {
    for (double beta : {0.05, 0.5, 1.0, 1.5, 2.0}) {
      const auto ms = mean_se(draws(WeibullFactor(beta), 1000000, 100 + static_cast<std::uint64_t>(beta * 10)));
      INFO("beta " << beta);
      CHECK(std::abs(ms.mean - 1.0) < 3.0 * ms.se);
    }
  }
  SUBCASE("degenerate at beta -> 0") {
    const auto x = draws(WeibullFactor(1e-6), 100000, 3);
    const auto ms = mean_se(x);
    CHECK(ms.se * ms.se * static_cast<double>(x.size()) < 1e-4);
  }
  SUBCASE("log_cdf and cdf agree, quantile inverts cdf") {
    const WeibullFactor f(0.6);
    for (double x : {1e-6, 0.1, 1.0, 5.0}) {
      CHECK(std::exp(f.log_cdf(x)) == doctest::Approx(f.cdf(x)).epsilon(1e-12));
      CHECK(f.quantile(f.cdf(x)) == doctest::Approx(x).epsilon(1e-10));
    }
  }
}

TEST_CASE("Inverse-Gamma factor") {
  CHECK_THROWS_AS(InvGammaFactor(1.0), DomainError);
  const InvGammaFactor f(5.0);
  const auto x = draws(f, 1000000, 11);
  const auto ms = mean_se(x);
  CHECK(std::abs(ms.mean - 1.0) < 3.0 * ms.se);

  // Sample variance against 1/(beta3 - 2), with its own Monte Carlo SE.
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - ms.mean) * (x[i] - ms.mean);
  const auto vs = mean_se(sq);
  CHECK(std::abs(vs.mean - 1.0 / 3.0) < 3.0 * vs.se);

  CHECK(hill_estimator(x, 1000) == doctest::Approx(0.2).epsilon(0.25));
  CHECK(std::abs(hill_estimator(x, 1000) - 0.2) < 0.05);

  SUBCASE("quantiles invert both tails") {
    for (double p : {1e-10, 0.01, 0.5, 0.99}) CHECK(f.cdf(f.quantile(p)) == doctest::Approx(p).epsilon(1e-10));
    for (double q : {1e-12, 1e-4, 0.3}) CHECK(f.survival(f.quantile_upper(q)) == doctest::Approx(q).epsilon(1e-10));
  }
  SUBCASE("log_pdf matches the textbook form") {
    const double a = 5.0, b = 4.0, xx = 0.7;
    const double ref = a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(xx) - b / xx;
    CHECK(f.log_pdf(xx) == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("transform and Jacobian") {
  const Bounds b{1.0, 1.0, 1.0};
  HyperParams th;
  th.gamma = Vec::Constant(2, 0.3);
  th.beta1 = 0.8;
  th.beta2 = 0.4;
  th.beta3 = 2.0;
  th.rho = 1.0;  // delta, midpoint of (0, 2 delta)
  const TransformedHyperParams tt = transform(th, b);
  CHECK(tt.beta1 == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(tt.rho == doctest::Approx(0.0));
  CHECK(tt.beta3 == doctest::Approx(0.0));

  TransformedHyperParams zero;
  zero.gamma = Vec::Zero(1);
  // beta1 term at 0 is -2 log 2, same for beta2; beta3 term 0; rho term log 2 - 2 log 2.
  CHECK(log_jacobian(zero, b) == doctest::Approx(-2 * std::log(2.0) * 2 + std::log(2.0) - 2 * std::log(2.0)));

  SUBCASE("boundary values are rejected") {
    HyperParams edge = th;
    edge.beta1 = 1.0;
    CHECK_THROWS_AS(transform(edge, b), DomainError);
    edge = th;
    edge.rho = 0.0;
    CHECK_THROWS_AS(transform(edge, b), DomainError);
  }
  SUBCASE("round trip over random parameters") {
    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const Bounds bb{0.5 + 2 * u(rng), 0.5 + 2 * u(rng), 0.1 + 3 * u(rng)};
      HyperParams h;
      h.gamma = Vec::Constant(1, 4 * u(rng) - 2);
      h.beta1 = bb.delta1 * (0.001 + 0.998 * u(rng));
      h.beta2 = bb.delta2 * (0.001 + 0.998 * u(rng));
      h.beta3 = 1.001 + 50 * u(rng);
      h.rho = 2 * bb.delta * (0.001 + 0.998 * u(rng));
      const HyperParams back = untransform(transform(h, bb), bb);
      CHECK(back.beta1 == doctest::Approx(h.beta1).epsilon(1e-12));
      CHECK(back.beta2 == doctest::Approx(h.beta2).epsilon(1e-12));
      CHECK(back.beta3 == doctest::Approx(h.beta3).epsilon(1e-12));
      CHECK(back.rho == doctest::Approx(h.rho).epsilon(1e-12));
      CHECK(back.gamma(0) == h.gamma(0));
    }
  }
  SUBCASE("log Jacobian equals log |det| of finite-difference derivatives") {
    const Bounds bb{1.3, 0.7, 0.9};
    TransformedHyperParams t;
    t.gamma = Vec::Constant(1, 0.1);
    t.beta1 = 0.4;
    t.beta2 = -1.1;
    t.beta3 = 0.7;
    t.rho = 2.3;
    const Vec flat = t.flatten();
    double logdet = 0.0;
    for (Eigen::Index i = 1; i < flat.size(); ++i) {
      auto f = [&](const Vec& v) { return untransform(TransformedHyperParams::unflatten(v), bb).flatten()(i); };
      logdet += std::log(std::abs(central_difference(f, flat, i, 1e-4)));
    }
    CHECK(log_jacobian(t, bb) == doctest::Approx(logdet).epsilon(1e-6));
  }
  SUBCASE("maps are monotone") {
    const Bounds bb{1.0, 1.0, 1.0};
    HyperParams lo = th, hi = th;
    lo.beta1 = 0.3;
    hi.beta1 = 0.31;
    lo.beta3 = 3.0;
    hi.beta3 = 3.1;
    CHECK(transform(lo, bb).beta1 < transform(hi, bb).beta1);
    CHECK(transform(lo, bb).beta3 > transform(hi, bb).beta3);
  }
}

TEST_CASE("simulate_field") {
  const StationSet st = unit_square(6, 9);
  HyperParams th;
  th.gamma = Vec::Constant(1, 0.2);
  th.beta1 = 0.8;
  th.beta2 = 0.7;
  th.beta3 = 5.0;
  th.rho = 0.5;

  SUBCASE("reproducible and positive") {
    const Mat a = simulate_field(th, st, 50, 123);
    const Mat b = simulate_field(th, st, 50, 123);
    CHECK(a == b);
    CHECK((a.array() > 0).all());
    CHECK(a != simulate_field(th, st, 50, 124));
  }
  SUBCASE("degenerate factors collapse onto alpha") {
    HyperParams deg = th;
    deg.beta1 = 1e-9;
    deg.beta2 = 1e-9;
    deg.beta3 = 1e9;
    const Mat y = simulate_field(deg, st, 20, 1);
    CHECK((y.array() / std::exp(0.2) - 1.0).abs().maxCoeff() < 1e-3);
  }
  SUBCASE("column means equal alpha") {
    const Mat y = simulate_field(th, st, 100000, 77);
    const Vec alpha = scale_vector(th, st);
    for (Eigen::Index j = 0; j < st.size(); ++j) {
      std::vector<double> col(y.col(j).data(), y.col(j).data() + y.rows());
      const auto ms = mean_se(col);
      INFO("site " << j);
      CHECK(std::abs(ms.mean - alpha(j)) < 3.0 * ms.se);
    }
  }
  SUBCASE("pooled margins have tail index 1 / beta3") {
    // Light Weibull factors so that the top 0.1% is inside the regular-variation regime.
    HyperParams t1 = th;
    t1.gamma(0) = 0.0;
    t1.beta1 = 0.1;
    t1.beta2 = 0.1;
    const Mat y = simulate_field(t1, unit_square(1, 2), 1000000, 31);
    std::vector<double> v(y.data(), y.data() + y.size());
    CHECK(std::abs(hill_estimator(v, 1000) - 0.2) < 0.05);
  }
  SUBCASE("invalid input") {
    HyperParams bad = th;
    bad.beta3 = 0.5;
    CHECK_THROWS_AS(simulate_field(bad, st, 10, 1), DomainError);
    CHECK_THROWS_AS(simulate_field(th, st, 0, 1), ContractError);
  }
}
