#include "doctest.h"

#include "spmix/copula.hpp"
#include "spmix/special.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace spmix;
using namespace spmix::testing;

namespace {

Mat two_site_distance(double h) { return (Mat(2, 2) << 0.0, h, h, 0.0).finished(); }

// Multivariate t density via its normal scale-mixture integral over the
// chi-square mixing variable.
double t_density_mixture(const Vec& z, const Mat& sigma, double nu) {
  const double d = static_cast<double>(z.size());
  const double quad = z.dot(sigma.ldlt().solve(z));
  const double logdet = std::log(sigma.determinant());
  auto integrand = [&](double w) {
    if (w <= 0) return 0.0;
    // N(z; 0, sigma * nu / w) times the chi-square(nu) density at w.
    const double log_norm = -0.5 * d * std::log(2 * M_PI) - 0.5 * logdet + 0.5 * d * std::log(w / nu) -
                            0.5 * quad * w / nu;
    const double log_chi = (0.5 * nu - 1) * std::log(w) - 0.5 * w - 0.5 * nu * std::log(2.0) - std::lgamma(0.5 * nu);
    return std::exp(log_norm + log_chi);
  };
  double total = 0.0;
  const double edges[] = {0.0, 0.5, 2.0, 5.0, 12.0, 30.0, 70.0, 200.0};
  for (int k = 0; k + 1 < 8; ++k) total += adaptive_simpson(integrand, edges[k], edges[k + 1], 1e-15);
  return total;
}

}  // namespace

TEST_CASE("build_correlation") {
  const auto c = CorrelationModel::build(two_site_distance(0.5), 1.0);
  CHECK(c.sigma()(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(c.sigma()(0, 1) == doctest::Approx(0.61).epsilon(0.01));
  CHECK(c.sigma()(0, 0) == 1.0);
  CHECK(c.jitter() == 0.0);

  const auto far = CorrelationModel::build(two_site_distance(0.5), 1e8);
  CHECK(far.sigma()(0, 1) > 1.0 - 1e-6);

  CHECK_THROWS_AS(CorrelationModel::build(two_site_distance(0.5), 0.0), DomainError);

  SUBCASE("Cholesky reconstruction on random site sets") {
    Rng rng(3);
    for (Eigen::Index d : {1, 5, 50, 200}) {
      const StationSet st = random_stations(d, 0, rng);
      const auto m = CorrelationModel::build(st, 0.3);
      CHECK(m.jitter() == 0.0);
      CHECK((m.sigma() - m.chol() * m.chol().transpose()).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((m.sigma() - m.sigma().transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("duplicate stations are rescued by jitter") {
    StationSet st;
    st.coords = (Mat(3, 2) << 0, 0, 0, 0, 1, 1).finished();
    st.Z.resize(3, 0);
    const auto m = CorrelationModel::build(st, 0.5);
    CHECK(m.jitter() > 0.0);
  }
  SUBCASE("an indefinite matrix fails naming the site pair") {
    Mat dist(3, 3);
    dist << 0, 0, 5, 0, 0, 0, 5, 0, 0;  // not a metric
    try {
      CorrelationModel::build(dist, 1.0);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("sites") != std::string::npos);
    }
  }
}

TEST_CASE("Gaussian copula density") {
  const auto c = CorrelationModel::build(two_site_distance(0.5), 1.0);
  const double r = std::exp(-0.5);
  CHECK(gaussian_copula_logdensity(Vec::Constant(2, 0.5), c) == doctest::Approx(-0.5 * std::log(1 - r * r)).epsilon(1e-13));

  const auto id = CorrelationModel::identity(3);
  CHECK(gaussian_copula_logdensity((Vec(3) << 0.1, 0.7, 0.99).finished(), id) == doctest::Approx(0.0));
  CHECK(gaussian_copula_logdensity(Vec::Constant(1, 0.3), CorrelationModel::identity(1)) == 0.0);

  CHECK_THROWS_AS(gaussian_copula_logdensity((Vec(2) << 0.0, 0.5).finished(), c), DomainError);
  CHECK_THROWS_AS(gaussian_copula_logdensity((Vec(2) << 0.5, 1.0).finished(), c), DomainError);

  SUBCASE("closed-form bivariate normal at arbitrary point") {
    const Vec v = (Vec(2) << 0.2, 0.9).finished();
    const double z1 = special::normal_quantile(0.2), z2 = special::normal_quantile(0.9);
    const double log_phi2 = -std::log(2 * M_PI) - 0.5 * std::log(1 - r * r) -
                            (z1 * z1 - 2 * r * z1 * z2 + z2 * z2) / (2 * (1 - r * r));
    const double expected = log_phi2 - special::normal_log_pdf(z1) - special::normal_log_pdf(z2);
    CHECK(gaussian_copula_logdensity(v, c) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("density integrates to one over the unit square") {
    Rng rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> vals(1000000);
    for (auto& x : vals) x = std::exp(gaussian_copula_logdensity((Vec(2) << u(rng), u(rng)).finished(), c));
    const auto ms = mean_se(vals);
    CHECK(std::abs(ms.mean - 1.0) < 3 * ms.se);
  }
}

TEST_CASE("Student-t copula density") {
  const auto id = CorrelationModel::identity(2);
  for (double nu : {1.0, 3.0, 7.5}) {
    // Median point: ratio of the bivariate and squared univariate t densities at 0.
    const double joint = t_density_mixture(Vec::Zero(2), Mat::Identity(2, 2), nu);
    const double uni = t_density_mixture(Vec::Zero(1), Mat::Identity(1, 1), nu);
    INFO("nu " << nu);
    CHECK(t_copula_logdensity(Vec::Constant(2, 0.5), id, nu) == doctest::Approx(std::log(joint / (uni * uni))).epsilon(1e-8));
  }
  SUBCASE("correlated, off-median point against the mixture integral") {
    const auto c = CorrelationModel::build(two_site_distance(0.5), 1.0);
    const double nu = 4.0;
    const Vec v = (Vec(2) << 0.3, 0.85).finished();
    Vec z(2);
    for (int j = 0; j < 2; ++j) z(j) = special::student_t_quantile(v(j), nu);
    const double joint = t_density_mixture(z, c.sigma(), nu);
    const double m1 = t_density_mixture(z.head(1), Mat::Identity(1, 1), nu);
    const double m2 = t_density_mixture(z.tail(1), Mat::Identity(1, 1), nu);
    CHECK(t_copula_logdensity(v, c, nu) == doctest::Approx(std::log(joint / (m1 * m2))).epsilon(1e-8));
  }
  SUBCASE("large nu approaches the Gaussian copula") {
    const auto c = CorrelationModel::build(two_site_distance(0.3), 0.8);
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int i = 0; i < 20; ++i) {
      const Vec v = (Vec(2) << u(rng), u(rng)).finished();
      CHECK(std::abs(t_copula_logdensity(v, c, 1e6) - gaussian_copula_logdensity(v, c)) < 1e-3);
    }
  }
  CHECK(t_copula_logdensity(Vec::Constant(1, 0.8), CorrelationModel::identity(1), 2.0) == doctest::Approx(0.0));
}

TEST_CASE("x3 joint density") {
  const double beta3 = 4.0;
  const InvGammaFactor f3(beta3);
  CHECK(x3_joint_logdensity(Vec::Constant(1, 0.8), beta3, CorrelationModel::identity(1), Copula::gaussian()) ==
        doctest::Approx(f3.log_pdf(0.8)).epsilon(1e-13));
  const Vec x = (Vec(3) << 0.4, 1.1, 2.5).finished();
  CHECK(std::abs(x3_joint_logdensity(x, beta3, CorrelationModel::identity(3), Copula::gaussian()) -
                 (f3.log_pdf(0.4) + f3.log_pdf(1.1) + f3.log_pdf(2.5))) < 1e-12);
  CHECK_THROWS_AS(x3_joint_logdensity(x, 1.0, CorrelationModel::identity(3), Copula::gaussian()), DomainError);

  SUBCASE("rectangle probability by 2-D quadrature of the density") {
    const auto c = CorrelationModel::build(two_site_distance(0.4), 0.7);
    const double r = c.sigma()(0, 1);
    const double a1 = 0.6, b1 = 1.4, a2 = 0.8, b2 = 2.0;
    auto inner = [&](double x1) {
      return adaptive_simpson(
          [&](double x2) {
            return std::exp(x3_joint_logdensity((Vec(2) << x1, x2).finished(), beta3, c, Copula::gaussian()));
          },
          a2, b2, 1e-11);
    };
    const double numeric = adaptive_simpson(inner, a1, b1, 1e-10);
    // Same probability on the normal-score scale by 1-D quadrature.
    auto zq = [&](double x) { return special::normal_quantile(f3.cdf(x)); };
    const double za1 = zq(a1), zb1 = zq(b1), za2 = zq(a2), zb2 = zq(b2);
    const double sr = std::sqrt(1 - r * r);
    const double oracle = adaptive_simpson(
        [&](double z1) {
          return std::exp(special::normal_log_pdf(z1)) *
                 (special::normal_cdf((zb2 - r * z1) / sr) - special::normal_cdf((za2 - r * z1) / sr));
        },
        za1, zb1, 1e-14);
    CHECK(numeric == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("copula sampling") {
  SUBCASE("independence") {
    const Mat u = copula_sample(CorrelationModel::identity(2), Copula::gaussian(), 100000, 5);
    Vec z1 = u.col(0).unaryExpr([](double v) { return special::normal_quantile(v); });
    Vec z2 = u.col(1).unaryExpr([](double v) { return special::normal_quantile(v); });
    const double rr = ((z1.array() - z1.mean()) * (z2.array() - z2.mean())).mean() /
                      std::sqrt((z1.array() - z1.mean()).square().mean() * (z2.array() - z2.mean()).square().mean());
    CHECK(std::abs(rr) < 0.01);
  }
  SUBCASE("correlated normal scores and uniform margins") {
    const auto c = CorrelationModel::build(two_site_distance(0.5), 1.0);
    for (const Copula cop : {Copula::gaussian(), Copula::student_t(3.0)}) {
      const Mat u = copula_sample(c, cop, 100000, 8);
      for (int j = 0; j < 2; ++j) {
        std::vector<double> col(u.col(j).data(), u.col(j).data() + u.rows());
        CHECK(ks_pvalue(ks_statistic(col, [](double v) { return v; }), col.size()) > 0.01);
        CHECK((u.col(j).array() > 0).all());
        CHECK((u.col(j).array() < 1).all());
      }
      if (cop.family == CopulaFamily::Gaussian) {
        Vec z1 = u.col(0).unaryExpr([](double v) { return special::normal_quantile(v); });
        Vec z2 = u.col(1).unaryExpr([](double v) { return special::normal_quantile(v); });
        const double rr = ((z1.array() - z1.mean()) * (z2.array() - z2.mean())).mean() /
                          std::sqrt((z1.array() - z1.mean()).square().mean() *
                                    (z2.array() - z2.mean()).square().mean());
        CHECK(std::abs(rr - std::exp(-0.5)) < 0.02);
        // Spearman correlation of uniforms = Pearson of the uniforms; theory (6/pi) asin(r/2).
        const Vec u1 = u.col(0), u2 = u.col(1);
        const double sp = ((u1.array() - 0.5) * (u2.array() - 0.5)).mean() * 12.0;
        CHECK(std::abs(sp - 6 / M_PI * std::asin(std::exp(-0.5) / 2)) < 0.02);
      }
    }
  }
  SUBCASE("one dimension") {
    const Mat u = copula_sample(CorrelationModel::identity(1), Copula::gaussian(), 100000, 1);
    std::vector<double> col(u.data(), u.data() + u.size());
    CHECK(ks_pvalue(ks_statistic(col, [](double v) { return v; }), col.size()) > 0.01);
  }
}
