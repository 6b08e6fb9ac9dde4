#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kfplab/expression.hpp"
#include "kfplab/representation.hpp"

using namespace kfp;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

CoefficientModel kolmogorov() {
  return CoefficientModel::constant(ModelStructure::build({1, 1}), Mat::Identity(1, 1));
}

CoefficientModel switching() {
  auto s = ModelStructure::build({1, 1});
  return CoefficientModel::piecewise(s, {0.5}, {Mat::Identity(1, 1), 2.0 * Mat::Identity(1, 1)});
}

// f(y) = exp(-1/2 y^T P y) pushed through the kernel: y ~ N(m, S) with
// m = E(s-t) x and S = 2 E(s-t) C E(s-t)^T, so
// u = det(I + S P)^{-1/2} exp(-1/2 m^T (P^{-1} + S)^{-1} m).
double gaussian_datum_solution(const CoefficientModel& model, const Mat& P, double s, const Vec& x, double t) {
  KernelWorkspace ws(model, t, s);
  Vec m = ws.E_st() * x;
  Mat S = 2.0 * ws.E_st() * ws.C() * ws.E_st().transpose();
  const int n = static_cast<int>(x.size());
  Mat K = P.inverse() + S;
  return std::exp(-0.5 * m.dot(K.ldlt().solve(m))) / std::sqrt((Mat::Identity(n, n) + S * P).determinant());
}

std::vector<ManufacturedSolution> bank(const ModelStructure& s) {
  std::vector<ManufacturedSolution> out;
  out.push_back(ManufacturedSolution::bump(s, 0.0));
  auto b = ManufacturedSolution::bump(s, 0.0);
  b.center = v2(0.3, -0.2);
  b.W << 2.0, 0.5, 0.5, 1.5;
  b.amplitude = -0.7;
  out.push_back(b);
  return out;
}

}  // namespace

TEST_CASE("Cauchy problem with constant datum") {
  auto model = switching();
  auto r = cauchy_solve(model, [](const Vec&) { return 1.0; }, 0.0, v2(0.4, -1.0), 0.9);
  CHECK(r.value == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("Cauchy problem with Gaussian datum") {
  Mat P(2, 2);
  P << 1.5, 0.4, 0.4, 0.8;
  auto f = [&](const Vec& y) { return std::exp(-0.5 * y.dot(P * y)); };
  for (const auto& model : {kolmogorov(), switching()})
    for (double t : {0.1, 0.5, 1.0})
      for (double a : {-1.0, 0.0, 0.5, 1.0})
        for (double b : {-1.0, 0.0, 1.0}) {
          Vec x = v2(a, b);
          double u = cauchy_solve(model, f, 0.0, x, t).value;
          CHECK(std::abs(u - gaussian_datum_solution(model, P, 0.0, x, t)) <= 1e-8);
        }
}

TEST_CASE("Cauchy solution tends to the datum") {
  auto model = kolmogorov();
  auto f = [](const Vec& y) { return std::exp(-y.squaredNorm()); };
  double prev = INFINITY;
  for (int j = 1; j <= 6; ++j) {
    double dt = std::pow(4.0, -j), sup = 0.0;
    for (double a = -1.0; a <= 1.0001; a += 0.25)
      for (double b = -1.0; b <= 1.0001; b += 0.25) {
        Vec x = v2(a, b);
        sup = std::max(sup, std::abs(cauchy_solve(model, f, 0.0, x, dt).value - f(x)));
      }
    CHECK(sup < prev);
    prev = sup;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("zero source gives zero") {
  auto model = kolmogorov();
  SourceSpec zero;
  zero.name = "zero";
  zero.g = [](const Vec&, double) { return 0.0; };
  CHECK(repr_u(model, zero, v2(0.1, 0.2), 0.7).value == 0.0);
  CHECK(t_ij(model, zero, 0, 0, v2(0.1, 0.2), 0.7).value == 0.0);
}

TEST_CASE("representation round trip") {
  for (const auto& model : {kolmogorov(), switching()})
    for (const auto& u : bank(model.structure())) {
      auto src = u.source(model, 1.0);
      for (double t : {0.6, 1.0}) {
        Vec x = v2(0.2, -0.1);
        CHECK(repr_u(model, src, x, t).value == doctest::Approx(u.u(x, t)).epsilon(1e-5));
        CHECK(repr_grad(model, src, 0, x, t).value == doctest::Approx(u.du(x, t, 0)).epsilon(1e-5));
      }
    }
}

TEST_CASE("Hessian round trip with constant coefficients") {
  auto model = kolmogorov();
  for (const auto& u : bank(model.structure())) {
    auto src = u.source(model, 1.0);
    for (Vec x : {v2(0.2, -0.1), v2(-0.4, 0.3)}) {
      double want = u.d2u(x, 0.8, 0, 0);
      double got = t_ij(model, src, 0, 0, x, 0.8).value;
      CHECK(std::abs(got - want) <= 1e-4 * std::abs(want));
    }
  }
}

TEST_CASE("Hessian round trip, two diffusive directions") {
  auto s = ModelStructure::build({2, 1}, {[] {
                                            Mat b(1, 2);
                                            b << 1, 0;
                                            return b;
                                          }()});
  Mat A(2, 2);
  A << 1.0, 0.2, 0.2, 0.7;
  auto model = CoefficientModel::constant(s, A);
  auto u = ManufacturedSolution::bump(s, 0.0);
  auto src = u.source(model, 1.0);
  Vec x(3);
  x << 0.1, -0.2, 0.15;
  for (int i = 0; i < 2; ++i)
    for (int j = i; j < 2; ++j) {
      double want = u.d2u(x, 0.9, i, j);
      double got = t_ij(model, src, i, j, x, 0.9).value;
      CHECK(std::abs(got - want) <= 1e-4 * std::max(std::abs(want), 1e-2 * u.d2u(x, 0.9, 0, 0)));
    }
}

TEST_CASE("Hessian round trip under the frozen-coefficient split") {
  auto base = kolmogorov();
  auto model = base.with_perturbation(
      [](const Vec& x, double) { return Mat::Constant(1, 1, 0.1 * std::sin(x(0)) * std::cos(x(1))); }, true,
      Modulus::analytic("lipschitz", [](double r) { return 0.1 * r; }, 0.5, 0.2));
  auto u = ManufacturedSolution::bump(model.structure(), 0.0);
  for (Vec xbar : {v2(0.2, -0.1), v2(0.5, 0.4)}) {
    auto src = frozen_source(model, u, xbar, 1.0);
    auto frozen = model.frozen_at(xbar);
    double want = u.d2u(xbar, 0.8, 0, 0);
    double got = t_ij(frozen, src, 0, 0, xbar, 0.8).value;
    CHECK(std::abs(got - want) <= 1e-3 * std::abs(want));
  }
}

TEST_CASE("Y from the identity") {
  auto model = switching();
  auto u = ManufacturedSolution::bump(model.structure(), 0.0);
  auto src = u.source(model, 1.0);
  Vec x = v2(0.1, 0.3);
  Mat H(1, 1);
  H(0, 0) = u.d2u(x, 0.7, 0, 0);
  CHECK(y_from_identity(model, src, H, x, 0.7) == doctest::Approx(u.Yu(model.structure(), x, 0.7)).epsilon(1e-10));
}

TEST_CASE("declared source modulus is enforced") {
  auto s = ModelStructure::build({1, 1});
  Box box;
  box.x = {{-1, 1}, {-1, 1}};
  SourceSpec ok;
  ok.g = [](const Vec& x, double) { return std::sin(x(0)); };
  ok.modulus = Modulus::analytic("lipschitz", [](double r) { return r; }, 0.5, 2.0);
  CHECK(source_modulus_check(ok, s, box, 2000, 1) <= 1.0);
  SourceSpec bad = ok;
  bad.g = [](const Vec& x, double) { return 5.0 * x(0); };
  CHECK_THROWS_AS(source_modulus_check(bad, s, box, 2000, 1), ContractViolation);
}

TEST_CASE("expressions") {
  auto e = Expression::parse("0.5*sin(x1)*cos(x2) + t^2 - step(x1) + gauss(2*t)", 2);
  Vec x = v2(0.3, -0.4);
  double want = 0.5 * std::sin(0.3) * std::cos(-0.4) + 0.49 - 1.0 + std::exp(-1.96);
  CHECK(e(x, 0.7) == doctest::Approx(want).epsilon(1e-15));
  CHECK_FALSE(e.constant_in_x());
  CHECK(Expression::parse("t*pi", 2).constant_in_x());
  CHECK(Expression::parse("-2^2", 1)(Vec::Zero(1), 0.0) == doctest::Approx(-4.0));
  CHECK_THROWS_AS(Expression::parse("x3", 2, "g"), ConfigError);
  CHECK_THROWS_AS(Expression::parse("sin(x1", 2), ConfigError);
  CHECK_THROWS_AS(Expression::parse("system(1)", 2), ConfigError);
  CHECK_THROWS_AS(Expression::parse("1 +", 2), ConfigError);
  try {
    Expression::parse("x1 + * 2", 2, "sources[0].expression");
    FAIL("no throw");
  } catch (const ConfigError& err) {
    CHECK(err.field().find("sources[0].expression") == 0);
  }
}
