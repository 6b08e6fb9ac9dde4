#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <cmath>

#include "kfplab/moduli.hpp"
#include "kfplab/representation.hpp"

using namespace kfp;

namespace {

Modulus log_power(double p) {
  return Modulus::analytic_log("log_" + std::to_string(p), [p](double u) { return std::pow(1.0 + std::abs(u), -p); },
                               0.5, 1.0);
}

// 4 int_0^inf int_0^inf exp(-mu(a^2+b^2)) (a + b^{1/3})^alpha da db
double gaussian_norm_moment_11(double mu, double alpha) {
  boost::math::quadrature::exp_sinh<double> es;
  auto outer = [&](double b) {
    auto inner = [&](double a) { return std::exp(-mu * a * a) * std::pow(a + std::cbrt(b), alpha); };
    return std::exp(-mu * b * b) * es.integrate(inner, 1e-13);
  };
  return 4.0 * es.integrate(outer, 1e-12);
}

}  // namespace

TEST_CASE("Dini integrals of the square root") {
  Modulus w = Modulus::power(0.5);
  CHECK(w.dini().value == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(w.log_dini().value == doctest::Approx(4.0).epsilon(1e-8));
  Modulus z = Modulus::zero();
  CHECK(z.dini().value == 0.0);
  CHECK(z.log_dini().value == 0.0);
}

TEST_CASE("log-Dini classifier") {
  Modulus w = log_power(1.5);
  CHECK(w.dini().finite());
  CHECK(w.dini().value == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(w.log_dini().status == Convergence::infinite);
  Modulus v = log_power(3.0);
  CHECK(v.log_dini().finite());
  // not even Dini
  Modulus u = log_power(0.8);
  CHECK(u.dini().status == Convergence::infinite);
}

TEST_CASE("M and N of power laws") {
  for (double a : {0.25, 0.5, 0.75}) {
    Modulus w = Modulus::power(a);
    double k = 1.0 + 1.0 / a + 1.0 / (1.0 - a);
    for (double r : {1e-6, 1e-3, 0.3, 1.0, 7.0, 100.0}) {
      CHECK(m_transform(w, r) == doctest::Approx(k * std::pow(r, a)).epsilon(1e-6));
      CHECK(n_transform(w, r) == doctest::Approx(k * k * std::pow(r, a)).epsilon(1e-6));
    }
  }
  CHECK(m_transform(Modulus::zero(), 0.5) == 0.0);
  CHECK(n_transform(Modulus::zero(), 0.5) == 0.0);
}

TEST_CASE("M of a non-Dini modulus is refused") {
  CHECK_THROWS_AS(m_transform(log_power(0.8), 0.1), std::domain_error);
}

TEST_CASE("U of power laws, heat structure") {
  auto s = ModelStructure::build({1});
  const double mu = 0.25;
  for (double a : {0.25, 0.5}) {
    Modulus w = Modulus::power(a);
    double I = std::tgamma((a + 1) / 2) * std::pow(mu, -(a + 1) / 2);
    for (double r : {0.01, 0.5, 2.0}) CHECK(u_mu_transform(w, mu, r, s) == doctest::Approx(std::pow(r, a) / a * I).epsilon(1e-6));
  }
}

TEST_CASE("U of the square root, Kolmogorov structure") {
  auto s = ModelStructure::build({1, 1});
  const double mu = 0.25, a = 0.5;
  double I = gaussian_norm_moment_11(mu, a);
  Modulus w = Modulus::power(a);
  for (double r : {0.05, 1.0, 3.0}) CHECK(u_mu_transform(w, mu, r, s) == doctest::Approx(std::pow(r, a) / a * I).epsilon(1e-6));
  // V applies U to M(omega) = 5 sqrt
  CHECK(v_mu_transform(w, mu, 1.0, s) == doctest::Approx(5.0 * I / a).epsilon(1e-6));
}

TEST_CASE("U decreases to zero") {
  auto s = ModelStructure::build({1, 1});
  Modulus w = log_power(3.0);
  double prev = INFINITY;
  for (int j = 0; j <= 20; j += 2) {
    double u = u_mu_transform(w, 0.25, std::ldexp(1.0, -j), s);
    CHECK(u < prev);
    prev = u;
  }
  CHECK(prev < 0.1 * u_mu_transform(w, 0.25, 1.0, s));
  CHECK(u_mu_transform(Modulus::zero(), 0.25, 0.5, s) == 0.0);
}

TEST_CASE("U bound check") {
  auto s = ModelStructure::build({1, 1});
  auto r = u_mu_bounds_check(Modulus::power(0.5), 0.25, s);
  CHECK(std::isfinite(r.c_star));
  CHECK(r.pass);
  auto z = u_mu_bounds_check(Modulus::zero(), 0.25, s);
  CHECK(z.c_star == 0.0);
  auto l = u_mu_bounds_check(log_power(2.0), 0.25, s);
  CHECK(std::isfinite(l.c_star));
}

TEST_CASE("M of a logarithmic modulus stays Dini") {
  Modulus w = log_power(3.0);
  Modulus m = m_modulus(w);
  CHECK(m.dini().finite());
  CHECK(m(0.5) >= w(0.5));
}

TEST_CASE("empirical modulus of a coordinate") {
  auto s = ModelStructure::build({1, 1});
  auto ax = linspace(0, 1, 9);
  auto f = SampledField::sample(s, {ax, ax}, {0.0, 0.5, 1.0}, [](const Vec& x, double) { return x(0); });
  std::vector<double> radii{0.125, 0.25, 0.5, 1.0, 2.0};
  auto w = empirical_modulus_values(f, radii);
  for (std::size_t k = 0; k < radii.size(); ++k) CHECK(w[k] == doctest::Approx(std::min(radii[k], 1.0)).epsilon(1e-12));
}

TEST_CASE("empirical modulus ignores time variation") {
  auto s = ModelStructure::build({1, 1});
  auto ax = linspace(-1, 1, 7);
  std::vector<double> radii{0.4, 0.8, 1.5};
  auto c = SampledField::sample(s, {ax, ax}, {0.0, 1.0}, [](const Vec&, double) { return 3.0; });
  auto g = SampledField::sample(s, {ax, ax}, {0.0, 0.3, 1.0}, [](const Vec&, double t) { return std::sin(9 * t); });
  for (double v : empirical_modulus_values(c, radii)) CHECK(v == 0.0);
  for (double v : empirical_modulus_values(g, radii)) CHECK(v == 0.0);
}

TEST_CASE("support locality") {
  auto s = ModelStructure::build({1, 1});
  auto ax = linspace(-2, 2, 17);
  GroupPoint c{Vec::Zero(2), 0.5};
  auto bump = [](const Vec& x, double) {
    double q = x.squaredNorm();
    return q < 0.5 ? std::exp(-1.0 / (0.5 - q)) : 0.0;
  };
  std::vector<double> radii{0.25, 0.5, 1.0};
  auto f = SampledField::sample(s, {ax, ax}, {0.5}, bump);
  CHECK(support_locality_check(f, c, 1.5, radii).pass);
  auto f10 = SampledField::sample(s, {ax, ax}, {0.5}, [&](const Vec& x, double t) { return 10 * bump(x, t); });
  CHECK(support_locality_check(f10, c, 1.5, radii).pass);
  auto z = SampledField::sample(s, {ax, ax}, {0.5}, [](const Vec&, double) { return 0.0; });
  auto rz = support_locality_check(z, c, 1.5, radii);
  CHECK(rz.pass);
  CHECK(rz.max_deviation == 0.0);
}

TEST_CASE("dyadic bounds") {
  auto s = ModelStructure::build({1, 1});
  GroupPoint xi{Vec::Zero(2), 0.0};
  DyadicOptions opt;
  opt.samples_per_shell = 20000;
  auto r1 = dyadic_bounds_check(Modulus::power(0.5), s, xi, 0.5, 1.0, opt);
  auto r2 = dyadic_bounds_check(Modulus::power(0.5), s, xi, 0.5, 2.0, opt);
  CHECK(std::isfinite(r1.c_star));
  CHECK(r1.pass);
  CHECK(std::abs(r2.c_star - r1.c_star) <= 0.1 * r1.c_star);
  auto z = dyadic_bounds_check(Modulus::zero(), s, xi, 0.5, 1.0, opt);
  CHECK(z.c_star == 0.0);
}

TEST_CASE("composite modulus") {
  Modulus w = composite_modulus("c", {{ModulusTerm::Kind::power, 0.1, 1.0}, {ModulusTerm::Kind::logarithmic, 1.0, 3.0}}, 0.5);
  CHECK(w(10.0) == doctest::Approx(0.5));
  CHECK(w(1e-3) == doctest::Approx(1e-4 + std::pow(1 + std::log(1e3), -3.0)));
  CHECK(w.log_dini().finite());
}
