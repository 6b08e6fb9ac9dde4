#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <numbers>

#include "kfplab/quadrature.hpp"

using namespace kfp;

TEST_CASE("Gauss-Hermite moments") {
  const double sqpi = std::sqrt(std::numbers::pi);
  for (int n : {4, 10, 20, 40}) {
    const auto& r = gauss_hermite(n);
    REQUIRE(r.nodes.size() == static_cast<std::size_t>(n));
    double m0 = 0, m2 = 0, m4 = 0, m1 = 0;
    for (int i = 0; i < n; ++i) {
      double x = r.nodes[i], w = r.weights[i];
      m0 += w;
      m1 += w * x;
      m2 += w * x * x;
      m4 += w * x * x * x * x;
    }
    CHECK(m0 == doctest::Approx(sqpi).epsilon(1e-13));
    CHECK(std::abs(m1) < 1e-13);
    CHECK(m2 == doctest::Approx(sqpi / 2).epsilon(1e-13));
    CHECK(m4 == doctest::Approx(3 * sqpi / 4).epsilon(1e-12));
  }
}

TEST_CASE("Gauss-Legendre exactness") {
  const auto& r = gauss_legendre(6);
  double s = 0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], 10);
  CHECK(s == doctest::Approx(2.0 / 11.0).epsilon(1e-14));
  CHECK(integrate_gauss([](double x) { return std::exp(x); }, 0, 1, 12) ==
        doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
}

TEST_CASE("tensor rule integrates a 3-d Gaussian moment") {
  const auto& r = tensor_gauss_hermite(3, 8);
  double s = 0;
  for (std::size_t k = 0; k < r.weights.size(); ++k) {
    auto p = r.points.row(static_cast<Eigen::Index>(k));
    s += r.weights[k] * p(0) * p(0) * p(1) * p(1);
  }
  double pi32 = std::pow(std::numbers::pi, 1.5);
  CHECK(s == doctest::Approx(pi32 / 4).epsilon(1e-12));
}

TEST_CASE("adaptive rule against tanh-sinh") {
  boost::math::quadrature::tanh_sinh<double> ts;
  auto f = [](double x) { return std::sqrt(x) * std::log1p(x); };
  double want = ts.integrate(f, 0.0, 2.0);
  auto got = integrate_adaptive(f, 0.0, 2.0, 1e-12);
  CHECK(got.value == doctest::Approx(want).epsilon(1e-10));
  auto g = [](double x) { return std::abs(x - 0.3); };
  CHECK(integrate_adaptive(g, 0.0, 1.0, 1e-12).value == doctest::Approx(0.045 + 0.245).epsilon(1e-10));
}

TEST_CASE("empty interval") {
  CHECK(integrate_adaptive([](double) { return 1.0; }, 1.0, 1.0).value == 0.0);
}
