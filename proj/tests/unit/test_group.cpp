#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "kfplab/group.hpp"

using namespace kfp;

namespace {

GroupPoint gp(std::initializer_list<double> x, double t) {
  GroupPoint p;
  p.x = Vec(static_cast<Eigen::Index>(x.size()));
  int i = 0;
  for (double v : x) p.x(i++) = v;
  p.t = t;
  return p;
}

GroupPoint random_point(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  GroupPoint p;
  p.x = Vec(n);
  for (int i = 0; i < n; ++i) p.x(i) = U(rng);
  p.t = U(rng);
  return p;
}

double gap(const GroupPoint& a, const GroupPoint& b) {
  return (a.x - b.x).cwiseAbs().maxCoeff() + std::abs(a.t - b.t);
}

}  // namespace

TEST_CASE("structure of the two-block Kolmogorov model") {
  auto s = ModelStructure::build({1, 1});
  CHECK(s.dim() == 2);
  CHECK(s.homogeneous_dimension() == 4);
  CHECK(s.exponents() == std::vector<int>{1, 3});
  Mat B(2, 2);
  B << 0, 0, 1, 0;
  CHECK(s.drift_matrix().isApprox(B));
}

TEST_CASE("heat case has zero drift") {
  auto s = ModelStructure::build({1});
  CHECK(s.drift_matrix().norm() == 0.0);
  CHECK(s.homogeneous_dimension() == 1);
}

TEST_CASE("three-step structure with a row block") {
  Mat B1(1, 2);
  B1 << 1, 0;
  auto s = ModelStructure::build({2, 1}, {B1});
  CHECK(s.exponents() == std::vector<int>{1, 1, 3});
  CHECK(s.homogeneous_dimension() == 5);
}

TEST_CASE("bad block sizes are rejected") {
  CHECK_THROWS_AS(ModelStructure::build({1, 2}), ConfigError);
  CHECK_THROWS_AS(ModelStructure::build({}), ConfigError);
}

TEST_CASE("E(t) closed form and homogeneity") {
  auto s = ModelStructure::build({1, 1});
  Mat E = exp_neg_tB(s, 0.7);
  Mat want(2, 2);
  want << 1, 0, -0.7, 1;
  CHECK((E - want).norm() < 1e-15);
  CHECK(exp_neg_tB(s, 0.0).isIdentity());
  double lam = 2.0, t = 0.3;
  Mat lhs = exp_neg_tB(s, lam * lam * t);
  Mat rhs = dilation_matrix(s, lam) * exp_neg_tB(s, t) * dilation_matrix(s, 1.0 / lam);
  CHECK((lhs - rhs).norm() <= 1e-12 * lhs.norm());
}

TEST_CASE("group law") {
  auto s = ModelStructure::build({1, 1});
  std::mt19937_64 rng(3);
  GroupPoint e = gp({0, 0}, 0);
  for (int k = 0; k < 50; ++k) {
    GroupPoint a = random_point(rng, 2), b = random_point(rng, 2), c = random_point(rng, 2);
    CHECK(gap(group_compose(s, e, b), b) < 1e-14);
    CHECK(gap(group_compose(s, group_inverse(s, a), a), e) < 1e-12);
    // associativity
    CHECK(gap(group_compose(s, group_compose(s, a, b), c), group_compose(s, a, group_compose(s, b, c))) < 1e-12);
    // (y,s)^{-1} o (x,t) = (x - E(t-s) y, t - s)
    GroupPoint lhs = group_compose(s, group_inverse(s, b), a);
    GroupPoint want{a.x - exp_neg_tB(s, a.t - b.t) * b.x, a.t - b.t};
    CHECK(gap(lhs, want) < 1e-12);
  }
  GroupPoint inv = group_inverse(s, gp({1, 0}, 1));
  CHECK(gap(inv, gp({-1, -1}, -1)) < 1e-15);
}

TEST_CASE("dilations") {
  auto s = ModelStructure::build({1, 1});
  GroupPoint a = gp({1, 1}, 1);
  CHECK(gap(dilate(s, 1.0, a), a) == 0.0);
  CHECK(gap(dilate(s, 2.0, a), gp({2, 8}, 4)) < 1e-14);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    GroupPoint p = random_point(rng, 2), q = random_point(rng, 2);
    double lam = 0.3 + k * 0.05;
    GroupPoint l = dilate(s, lam, group_compose(s, p, q));
    GroupPoint r = group_compose(s, dilate(s, lam, p), dilate(s, lam, q));
    CHECK(gap(l, r) < 1e-11);
    CHECK(hom_norm(s, dilate(s, lam, p)) == doctest::Approx(lam * hom_norm(s, p)).epsilon(1e-12));
  }
}

TEST_CASE("norm and quasi-distance") {
  auto s = ModelStructure::build({1, 1});
  CHECK(hom_norm(s, gp({0, 0}, 0)) == 0.0);
  CHECK(hom_norm(s, gp({1, 8}, 4)) == doctest::Approx(5.0).epsilon(1e-14));
  std::mt19937_64 rng(9);
  for (int k = 0; k < 20; ++k) {
    GroupPoint a = random_point(rng, 2), b = random_point(rng, 2);
    b.t = a.t;
    double d = quasi_distance(s, a, b);
    CHECK(d == doctest::Approx(anisotropic_norm(s, a.x - b.x)).epsilon(1e-12));
    CHECK(d == doctest::Approx(quasi_distance(s, b, a)).epsilon(1e-12));
  }
}

TEST_CASE("ball volume scaling") {
  auto s = ModelStructure::build({1, 1});
  double v1 = ball_volume(s, 1.0);
  CHECK(v1 > 0.0);
  CHECK(ball_volume(s, 2.0) / v1 == doctest::Approx(64.0).epsilon(1e-14));
  CHECK(ball_volume(s, 0.5) / v1 == doctest::Approx(std::pow(0.5, 6)).epsilon(1e-14));
  // independent Monte-Carlo measurement of |B_2(0)|
  auto direct = measure_ball(s, 2.0, 200000, 77);
  const auto& unit = s.unit_ball_volume();
  double se = std::hypot(direct.std_error, 64.0 * unit.std_error);
  CHECK(std::abs(direct.value - 64.0 * unit.value) <= 3.0 * se);
}

TEST_CASE("structural constants") {
  Box box;
  box.x = {{-1, 1}, {-1, 1}};
  box.t = {0, 1};
  auto s = ModelStructure::build({1, 1});
  auto a = estimate_structural_constants(s, 20000, 1, box);
  auto b = estimate_structural_constants(s, 40000, 1, box);
  CHECK(a.kappa >= 1.0);
  CHECK(std::isfinite(a.kappa));
  CHECK(std::abs(b.kappa - a.kappa) <= 0.05 * b.kappa);

  auto heat = ModelStructure::build({1});
  Box hb;
  hb.x = {{-1, 1}};
  auto h = estimate_structural_constants(heat, 5000, 2, hb);
  CHECK(h.kappa >= 1.0);

  double c = exp_holder_constant(s, 20000, 4, box);
  CHECK(std::isfinite(c));
  CHECK(c > 0.0);
}

TEST_CASE("structural constants are reproducible") {
  Box box;
  box.x = {{-1, 1}, {-1, 1}};
  auto s = ModelStructure::build({1, 1});
  auto a = estimate_structural_constants(s, 5000, 42, box);
  auto b = estimate_structural_constants(s, 5000, 42, box);
  CHECK(a.kappa == b.kappa);
  CHECK(a.vartheta == b.vartheta);
}
