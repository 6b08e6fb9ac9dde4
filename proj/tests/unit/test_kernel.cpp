#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "kfplab/kernel.hpp"

using namespace kfp;

namespace {

const double kPi = std::numbers::pi;

Mat c0_closed(double tau) {
  Mat C(2, 2);
  C << tau, -tau * tau / 2, -tau * tau / 2, tau * tau * tau / 3;
  return C;
}

CoefficientModel kolmogorov() {
  auto s = ModelStructure::build({1, 1});
  return CoefficientModel::constant(s, Mat::Identity(1, 1));
}

CoefficientModel switching() {
  auto s = ModelStructure::build({1, 1});
  return CoefficientModel::piecewise(s, {0.5}, {Mat::Identity(1, 1), 2.0 * Mat::Identity(1, 1)});
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("covariance closed form and homogeneity") {
  auto model = kolmogorov();
  for (double tau : {0.1, 1.0, 10.0}) {
    Mat C = covariance_matrix(model, tau, 0.0);
    CHECK((C - c0_closed(tau)).norm() <= 1e-12 * c0_closed(tau).norm());
    CHECK(C.determinant() == doctest::Approx(std::pow(tau, 4) / 12).epsilon(1e-11));
    const auto& s = model.structure();
    Mat D = dilation_matrix(s, std::sqrt(tau)).toDenseMatrix();
    Mat H = D * covariance_matrix(model, 1.0, 0.0) * D;
    CHECK((C - H).norm() <= 1e-12 * C.norm());
  }
  // only the elapsed time matters for constant a0
  CHECK((covariance_matrix(model, 2.3, 1.3) - c0_closed(1.0)).norm() < 1e-12);
}

TEST_CASE("heat covariance") {
  auto s = ModelStructure::build({3});
  Mat A(3, 3);
  A << 2, 0.3, 0, 0.3, 1, 0.1, 0, 0.1, 1.5;
  auto model = CoefficientModel::constant(s, A);
  CHECK((covariance_matrix(model, 0.9, 0.2) - 0.7 * A).norm() < 1e-13);
}

TEST_CASE("heat kernel closed form") {
  auto s = ModelStructure::build({2});
  const double a = 1.7;
  auto model = CoefficientModel::constant(s, a * Mat::Identity(2, 2));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-1.5, 1.5), T(0.05, 2.0);
  for (int k = 0; k < 100; ++k) {
    Vec x = v2(U(rng), U(rng)), y = v2(U(rng), U(rng));
    double tau = T(rng), s0 = U(rng);
    double want = std::pow(4 * kPi * a * tau, -1.0) * std::exp(-(x - y).squaredNorm() / (4 * a * tau));
    CHECK(gamma(model, x, s0 + tau, y, s0) == doctest::Approx(want).epsilon(1e-12));
    // first derivative in x1
    double d = gamma_derivatives(model, x, s0 + tau, y, s0, {1, 0}, {0, 0});
    CHECK(d == doctest::Approx(-(x(0) - y(0)) / (2 * a * tau) * want).epsilon(1e-10));
  }
  CHECK(gamma(model, v2(0, 0), 0.0, v2(0, 0), 1.0) == 0.0);
  CHECK(gamma(model, v2(0, 0), 1.0, v2(0, 0), 1.0) == 0.0);
}

TEST_CASE("Kolmogorov kernel at the origin") {
  auto model = kolmogorov();
  for (double t : {0.1, 1.0, 3.0})
    CHECK(gamma(model, v2(0, 0), t, v2(0, 0), 0.0) == doctest::Approx(std::sqrt(3.0) / (2 * kPi * t * t)).epsilon(1e-12));
}

TEST_CASE("mixed second derivatives commute") {
  auto model = switching();
  Vec x = v2(0.3, -0.2), y = v2(-0.1, 0.4);
  double a = gamma_derivatives(model, x, 0.9, y, 0.1, {1, 1}, {0, 0});
  double b = gamma_derivatives(model, x, 0.9, y, 0.1, {1, 1}, {0, 0});
  CHECK(a == b);
  double xy = gamma_derivatives(model, x, 0.9, y, 0.1, {1, 0}, {1, 0});
  CHECK(std::isfinite(xy));
}

TEST_CASE("derivatives match central differences at second order") {
  auto model = switching();
  Vec x = v2(0.2, 0.1), y = v2(0.0, -0.3);
  const double t = 0.8, s = 0.1;
  std::vector<double> errs;
  for (double h : {1e-2, 5e-3, 2.5e-3}) {
    double fd = (gamma(model, x + v2(0, h), t, y, s) - gamma(model, x - v2(0, h), t, y, s)) / (2 * h);
    errs.push_back(std::abs(fd - gamma_derivatives(model, x, t, y, s, {0, 1}, {0, 0})));
  }
  for (std::size_t i = 1; i < errs.size(); ++i) CHECK(std::log2(errs[i - 1] / errs[i]) >= 1.9);
}

TEST_CASE("drift term against finite differences") {
  auto model = kolmogorov();
  Vec x = v2(0.4, -0.2), y = v2(0.1, 0.1);
  const double t = 0.7, s = 0.0, h = 1e-5;
  double fd = x(0) * (gamma(model, x + v2(0, h), t, y, s) - gamma(model, x - v2(0, h), t, y, s)) / (2 * h);
  CHECK(drift_term(model, x, t, y, s) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("normalization, constant and switching coefficients") {
  for (const auto& model : {kolmogorov(), switching()})
    for (double t : {0.2, 0.5, 1.0})
      for (double a : {-1.0, 0.0, 1.0}) {
        auto r = gamma_normalization_check(model, v2(a, 0.7 * a), t, 0.0);
        CHECK(r.lhs_max <= 1e-8);
        CHECK(r.pass);
      }
  auto heat = CoefficientModel::constant(ModelStructure::build({1}), Mat::Identity(1, 1));
  Vec x(1);
  x << 0.3;
  CHECK(gamma_normalization_check(heat, x, 1.0, 0.0).lhs_max < 1e-14);
}

TEST_CASE("Chapman-Kolmogorov") {
  auto heat = CoefficientModel::constant(ModelStructure::build({2}), Mat::Identity(2, 2));
  CHECK(chapman_kolmogorov_check(heat, v2(0.2, 0.1), 1.0, 0.5, v2(-0.3, 0.4), 0.0).lhs_max <= 1e-10);
  CHECK(chapman_kolmogorov_check(kolmogorov(), v2(0.2, 0.1), 1.0, 0.5, v2(-0.3, 0.4), 0.0).lhs_max <= 1e-6);
  CHECK(chapman_kolmogorov_check(switching(), v2(0.2, 0.1), 1.0, 0.3, v2(-0.3, 0.4), 0.0).lhs_max <= 1e-6);
  CHECK_THROWS(chapman_kolmogorov_check(heat, v2(0, 0), 1.0, 1e-9, v2(0, 0), 0.0));
}

TEST_CASE("L Gamma residual is second order") {
  auto heat = CoefficientModel::constant(ModelStructure::build({1}), Mat::Identity(1, 1));
  Vec y(1);
  y << 0.0;
  auto r = lgamma_residual_check(heat, y, 0.0);
  CHECK(r.details.at("order") >= 1.9);
  CHECK(r.pass);
  auto k = lgamma_residual_check(switching(), v2(0, 0), 0.0);
  CHECK(k.details.at("order") >= 1.9);
  CHECK(k.details.at("excluded_switch_points") > 0);
}

TEST_CASE("Gaussian bounds") {
  SampleSpec spec;
  spec.count = 500;
  spec.seed = 3;
  auto model = kolmogorov();
  auto r0 = gaussian_bound_check(model, {0, 0}, {0, 0}, spec);
  CHECK(std::isfinite(r0.c_star));
  CHECK(r0.c_star > 0.0);
  auto r2 = gaussian_bound_check(model, {2, 0}, {0, 0}, spec);
  CHECK(std::isfinite(r2.c_star));
  CHECK(std::isfinite(r2.details.at("c_distance")));
}

TEST_CASE("separation filter") {
  auto s = ModelStructure::build({1, 1});
  GroupPoint a{v2(0, 0), 1.0}, b{v2(0.01, 0), 1.0}, far{v2(0, 0), 0.0};
  CHECK(separation_ok(s, a, b, far, 1.5));
  CHECK_FALSE(separation_ok(s, a, a, far, 1.5));
  GroupPoint near{v2(0.02, 0), 1.0};
  CHECK_FALSE(separation_ok(s, a, b, near, 1.5));
}

TEST_CASE("whitened integral of a polynomial") {
  auto model = kolmogorov();
  KernelWorkspace ws(model, 1.0, 0.0);
  Vec x = v2(0.5, -0.2);
  // E[y] = E(s-t) x for the kernel as a density in y
  Vec mean = ws.E_st() * x;
  auto r = integrate_against_gamma(ws, x, [](const Vec& y) { return y(1); }, {});
  CHECK(r.value == doctest::Approx(mean(1)).epsilon(1e-12));
}

TEST_CASE("piecewise model validation") {
  auto s = ModelStructure::build({1, 1});
  CHECK_THROWS(CoefficientModel::piecewise(s, {0.5}, {Mat::Identity(1, 1)}));
  CHECK_THROWS(CoefficientModel::constant(s, -Mat::Identity(1, 1)));
}
